use crate::error::{Error, Result};
use crate::tensor_ops::FilterSpec;

use super::{EdgeOp, NetGraph};

fn mul(a: [usize; 3], b: [usize; 3]) -> [usize; 3] {
    [a[0] * b[0], a[1] * b[1], a[2] * b[2]]
}

pub(super) fn to_sliding_equivalent(g: &NetGraph) -> Result<NetGraph> {
    // accumulated stride at every node
    let mut stride: Vec<Option<[usize; 3]>> = vec![None; g.nodes.len()];
    for v in g.inputs() {
        stride[v] = Some([1, 1, 1]);
    }
    let mut edges = g.edges.clone();
    for &v in &g.topo {
        let s = stride[v].expect("stride known in topological order");
        for &e in &g.out_edges[v] {
            let edge = &mut edges[e];
            let mut out = s;
            edge.op = match edge.op {
                EdgeOp::Conv { kernel, sparsity } => EdgeOp::Conv { kernel, sparsity: mul(sparsity, s) },
                EdgeOp::MaxFilter(f) => EdgeOp::MaxFilter(FilterSpec { k: f.k, s: mul(f.s, s) }),
                EdgeOp::MaxPool(p) => {
                    out = mul(s, p.p);
                    EdgeOp::MaxFilter(FilterSpec { k: p.p, s })
                }
                op @ EdgeOp::Transfer { .. } => op,
            };
            match stride[edge.to] {
                None => stride[edge.to] = Some(out),
                Some(prev) if prev != out => {
                    return Err(Error::Graph(format!(
                        "node `{}` is reached with strides {prev:?} and {out:?}",
                        g.nodes[edge.to].name
                    )))
                }
                _ => {}
            }
        }
    }
    let mut out = NetGraph::structure(g.nodes.clone(), edges)?;
    out.shapes = out.infer_shapes_forward(g.input_shape())?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::tests::{edge, node};
    use super::super::NodeRole;
    use super::*;
    use crate::tensor_ops::PoolSpec;

    #[test]
    fn pool_dilates_downstream_conv() {
        let g = NetGraph::new(
            vec![
                node("in", NodeRole::Input),
                node("a", NodeRole::Internal),
                node("b", NodeRole::Internal),
                node("out", NodeRole::Output),
            ],
            vec![
                edge(0, 1, EdgeOp::conv([3, 3, 3])),
                edge(1, 2, EdgeOp::MaxPool(PoolSpec { p: [2, 2, 2] })),
                edge(2, 3, EdgeOp::conv([3, 3, 3])),
            ],
            [1, 1, 1],
        )
        .unwrap();
        assert_eq!(g.input_shape(), [8, 8, 8]);
        let s = g.to_sliding_equivalent().unwrap();
        assert_eq!(s.edge(1).op, EdgeOp::MaxFilter(FilterSpec { k: [2, 2, 2], s: [1, 1, 1] }));
        assert_eq!(s.edge(2).op, EdgeOp::Conv { kernel: [3, 3, 3], sparsity: [2, 2, 2] });
        // field of view equals the original input: one dense output voxel
        assert_eq!(s.output_shape(), [1, 1, 1]);
        let wide = s.reshaped_from_input([12, 12, 12]).unwrap();
        assert_eq!(wide.output_shape(), [5, 5, 5]);
    }

    #[test]
    fn no_pooling_is_unchanged() {
        let g = NetGraph::new(
            vec![node("in", NodeRole::Input), node("out", NodeRole::Output)],
            vec![edge(0, 1, EdgeOp::conv([2, 2, 2]))],
            [3, 3, 3],
        )
        .unwrap();
        assert_eq!(g.to_sliding_equivalent().unwrap(), g);
    }
}
