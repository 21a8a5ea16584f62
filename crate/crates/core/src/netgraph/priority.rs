use super::{EdgeId, NetGraph};

/// Total orders over edges for the forward and backward passes. Rank 0 is
/// the most urgent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PriorityTable {
    pub fwd_rank: Vec<usize>,
    pub bwd_rank: Vec<usize>,
}

impl PriorityTable {
    /// Edges sorted from most to least urgent in the forward pass.
    pub fn fwd_order(&self) -> Vec<EdgeId> {
        order_of(&self.fwd_rank)
    }

    pub fn bwd_order(&self) -> Vec<EdgeId> {
        order_of(&self.bwd_rank)
    }
}

fn order_of(rank: &[usize]) -> Vec<EdgeId> {
    let mut out = vec![0; rank.len()];
    for (e, &r) in rank.iter().enumerate() {
        out[r] = e;
    }
    out
}

fn ranks(mut keyed: Vec<(std::cmp::Reverse<usize>, usize, EdgeId)>) -> Vec<usize> {
    keyed.sort();
    let mut rank = vec![0; keyed.len()];
    for (r, &(_, _, e)) in keyed.iter().enumerate() {
        rank[e] = r;
    }
    rank
}

/// Forward: edges whose head lies farther from the outputs go first; ties
/// by head node id, then edge id, so edges feeding the same sum are adjacent.
/// Backward mirrors this with the tail's distance from the inputs.
pub fn compute_priorities(g: &NetGraph) -> PriorityTable {
    use std::cmp::Reverse;
    let to_out = g.depth_to_output();
    let from_in = g.depth_from_input();
    let fwd = g.edges().iter().enumerate().map(|(i, e)| (Reverse(to_out[e.to]), e.to, i)).collect();
    let bwd = g.edges().iter().enumerate().map(|(i, e)| (Reverse(from_in[e.from]), e.from, i)).collect();
    PriorityTable { fwd_rank: ranks(fwd), bwd_rank: ranks(bwd) }
}
