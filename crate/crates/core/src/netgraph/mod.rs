//! Computation graph: image nodes joined by operation edges, with
//! validation, shape inference, the sliding-window transform and the
//! scheduling priorities.

mod parse;
mod priority;
mod sliding;

pub use parse::{layered, parse_layered_spec, parse_netspec, LayeredSpec};
pub use priority::{compute_priorities, PriorityTable};

use std::collections::VecDeque;
use std::fmt;

use crate::convolution::effective_extent;
use crate::error::{Error, Result};
use crate::tensor_ops::{Dim3, FilterSpec, PoolSpec, TransferKind};

pub type NodeId = usize;
pub type EdgeId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NodeRole {
    Input,
    Internal,
    Output,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub name: String,
    pub role: NodeRole,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EdgeOp {
    Conv { kernel: Dim3, sparsity: Dim3 },
    Transfer { kind: TransferKind },
    MaxPool(PoolSpec),
    MaxFilter(FilterSpec),
}

impl EdgeOp {
    pub fn conv(kernel: Dim3) -> Self {
        EdgeOp::Conv { kernel, sparsity: [1, 1, 1] }
    }

    pub fn is_conv(&self) -> bool {
        matches!(self, EdgeOp::Conv { .. })
    }

    /// Convolutions train their kernel, transfer edges their bias.
    pub fn is_trainable(&self) -> bool {
        matches!(self, EdgeOp::Conv { .. } | EdgeOp::Transfer { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            EdgeOp::Conv { .. } => "conv",
            EdgeOp::Transfer { .. } => "transfer",
            EdgeOp::MaxPool(_) => "pool",
            EdgeOp::MaxFilter(_) => "filter",
        }
    }

    pub fn forward_dims(&self, input: Dim3) -> Result<Dim3> {
        match self {
            EdgeOp::Conv { kernel, sparsity } => {
                let ke = effective_extent(*kernel, *sparsity);
                if (0..3).any(|a| ke[a] > input[a]) {
                    return Err(Error::structural(
                        "conv",
                        format!("effective kernel {ke:?} larger than input {input:?}"),
                    ));
                }
                Ok([0, 1, 2].map(|a| input[a] - ke[a] + 1))
            }
            EdgeOp::Transfer { .. } => Ok(input),
            EdgeOp::MaxPool(p) => p.output_dims(input),
            EdgeOp::MaxFilter(f) => f.output_dims(input),
        }
    }

    pub fn backward_dims(&self, output: Dim3) -> Dim3 {
        match self {
            EdgeOp::Conv { kernel, sparsity } => {
                let ke = effective_extent(*kernel, *sparsity);
                [0, 1, 2].map(|a| output[a] + ke[a] - 1)
            }
            EdgeOp::Transfer { .. } => output,
            EdgeOp::MaxPool(p) => [0, 1, 2].map(|a| output[a] * p.p[a]),
            EdgeOp::MaxFilter(f) => {
                let w = f.window();
                [0, 1, 2].map(|a| output[a] + w[a] - 1)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub name: String,
    pub from: NodeId,
    pub to: NodeId,
    pub op: EdgeOp,
    /// Per-edge learning rate override.
    pub lr: Option<f64>,
}

/// Validated DAG with a shape for every node.
#[derive(Clone, Debug, PartialEq)]
pub struct NetGraph {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    in_edges: Vec<Vec<EdgeId>>,
    out_edges: Vec<Vec<EdgeId>>,
    topo: Vec<NodeId>,
    shapes: Vec<Dim3>,
}

impl NetGraph {
    /// Validates structure and infers shapes backward from `output_shape`,
    /// which applies to every output node.
    pub fn new(nodes: Vec<Node>, edges: Vec<Edge>, output_shape: Dim3) -> Result<Self> {
        let mut g = Self::structure(nodes, edges)?;
        g.shapes = g.infer_shapes(output_shape)?;
        Ok(g)
    }

    /// As [`new`](Self::new) but anchored at the input nodes.
    pub fn from_input_shape(nodes: Vec<Node>, edges: Vec<Edge>, input_shape: Dim3) -> Result<Self> {
        let mut g = Self::structure(nodes, edges)?;
        g.shapes = g.infer_shapes_forward(input_shape)?;
        Ok(g)
    }

    fn structure(nodes: Vec<Node>, edges: Vec<Edge>) -> Result<Self> {
        let n = nodes.len();
        let mut in_edges = vec![Vec::new(); n];
        let mut out_edges = vec![Vec::new(); n];
        for (i, e) in edges.iter().enumerate() {
            if e.from >= n || e.to >= n {
                return Err(Error::Graph(format!("edge `{}` refers to a missing node", e.name)));
            }
            if e.from == e.to {
                return Err(Error::Graph(format!("edge `{}` is a self loop", e.name)));
            }
            out_edges[e.from].push(i);
            in_edges[e.to].push(i);
        }
        let mut g = NetGraph { nodes, edges, in_edges, out_edges, topo: Vec::new(), shapes: Vec::new() };
        g.topo = g.topological_order()?;
        g.validate()?;
        Ok(g)
    }

    fn topological_order(&self) -> Result<Vec<NodeId>> {
        let mut indeg: Vec<usize> = self.in_edges.iter().map(Vec::len).collect();
        let mut ready: VecDeque<NodeId> = (0..self.nodes.len()).filter(|&v| indeg[v] == 0).collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(v) = ready.pop_front() {
            order.push(v);
            for &e in &self.out_edges[v] {
                let w = self.edges[e].to;
                indeg[w] -= 1;
                if indeg[w] == 0 {
                    ready.push_back(w);
                }
            }
        }
        if order.len() != self.nodes.len() {
            let stuck = (0..self.nodes.len()).find(|&v| indeg[v] > 0).expect("node on a cycle");
            return Err(Error::Graph(format!("cycle through node `{}`", self.nodes[stuck].name)));
        }
        Ok(order)
    }

    fn validate(&self) -> Result<()> {
        if self.inputs().is_empty() || self.outputs().is_empty() {
            return Err(Error::Graph("graph needs at least one input and one output node".into()));
        }
        for (v, node) in self.nodes.iter().enumerate() {
            let (ins, outs) = (&self.in_edges[v], &self.out_edges[v]);
            let name = &node.name;
            match node.role {
                NodeRole::Input if !ins.is_empty() => {
                    return Err(Error::Graph(format!("input node `{name}` has incoming edges")))
                }
                NodeRole::Output if !outs.is_empty() => {
                    return Err(Error::Graph(format!("output node `{name}` has outgoing edges")))
                }
                NodeRole::Internal | NodeRole::Output if ins.is_empty() => {
                    return Err(Error::Graph(format!("node `{name}` has no incoming edge")))
                }
                NodeRole::Internal if outs.is_empty() => {
                    return Err(Error::Graph(format!("node `{name}` does not lead to an output")))
                }
                _ => {}
            }
            if ins.len() > 1 && ins.iter().any(|&e| !self.edges[e].op.is_conv()) {
                return Err(Error::Graph(format!(
                    "node `{name}` has {} convergent edges; all must be convolutions",
                    ins.len()
                )));
            }
        }
        Ok(())
    }

    /// Shapes inferred backward from the outputs, then checked by a forward pass.
    pub fn infer_shapes(&self, output_shape: Dim3) -> Result<Vec<Dim3>> {
        check_positive(output_shape)?;
        let mut shapes: Vec<Option<Dim3>> = vec![None; self.nodes.len()];
        for &v in self.topo.iter().rev() {
            if self.nodes[v].role == NodeRole::Output {
                shapes[v] = Some(output_shape);
                continue;
            }
            for &e in &self.out_edges[v] {
                let edge = &self.edges[e];
                let want = edge.op.backward_dims(shapes[edge.to].expect("successor shape"));
                match shapes[v] {
                    None => shapes[v] = Some(want),
                    Some(have) if have != want => {
                        return Err(Error::Graph(format!(
                            "node `{}`: edge `{}` needs shape {want:?}, another path needs {have:?}",
                            self.nodes[v].name, edge.name
                        )))
                    }
                    _ => {}
                }
            }
        }
        let shapes: Vec<Dim3> = shapes.into_iter().map(|s| s.expect("every node shaped")).collect();
        self.check_forward(&shapes)?;
        Ok(shapes)
    }

    /// Shapes inferred forward from the inputs, then checked backward.
    pub fn infer_shapes_forward(&self, input_shape: Dim3) -> Result<Vec<Dim3>> {
        check_positive(input_shape)?;
        let mut shapes: Vec<Option<Dim3>> = vec![None; self.nodes.len()];
        for &v in &self.topo {
            if self.nodes[v].role == NodeRole::Input {
                shapes[v] = Some(input_shape);
                continue;
            }
            for &e in &self.in_edges[v] {
                let edge = &self.edges[e];
                let got = edge
                    .op
                    .forward_dims(shapes[edge.from].expect("predecessor shape"))
                    .map_err(|err| Error::Graph(format!("edge `{}`: {err}", edge.name)))?;
                match shapes[v] {
                    None => shapes[v] = Some(got),
                    Some(have) if have != got => {
                        return Err(Error::Graph(format!(
                            "node `{}`: incoming shapes {have:?} and {got:?} disagree",
                            self.nodes[v].name
                        )))
                    }
                    _ => {}
                }
            }
        }
        let shapes: Vec<Dim3> = shapes.into_iter().map(|s| s.expect("every node shaped")).collect();
        let outs: Vec<Dim3> = self.outputs().iter().map(|&v| shapes[v]).collect();
        if outs.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::Graph(format!("output nodes disagree on shape: {outs:?}")));
        }
        if self.infer_shapes(outs[0])? != shapes {
            return Err(Error::Graph("shape inference is not reversible for this graph".into()));
        }
        Ok(shapes)
    }

    fn check_forward(&self, shapes: &[Dim3]) -> Result<()> {
        for e in &self.edges {
            let got =
                e.op.forward_dims(shapes[e.from]).map_err(|err| Error::Graph(format!("edge `{}`: {err}", e.name)))?;
            if got != shapes[e.to] {
                return Err(Error::Graph(format!(
                    "edge `{}` produces {got:?} but node `{}` has shape {:?}",
                    e.name, self.nodes[e.to].name, shapes[e.to]
                )));
            }
        }
        Ok(())
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node(&self, v: NodeId) -> &Node {
        &self.nodes[v]
    }

    pub fn edge(&self, e: EdgeId) -> &Edge {
        &self.edges[e]
    }

    pub fn in_edges(&self, v: NodeId) -> &[EdgeId] {
        &self.in_edges[v]
    }

    pub fn out_edges(&self, v: NodeId) -> &[EdgeId] {
        &self.out_edges[v]
    }

    pub fn topo_order(&self) -> &[NodeId] {
        &self.topo
    }

    pub fn shape(&self, v: NodeId) -> Dim3 {
        self.shapes[v]
    }

    pub fn shapes(&self) -> &[Dim3] {
        &self.shapes
    }

    pub fn inputs(&self) -> Vec<NodeId> {
        self.role_nodes(NodeRole::Input)
    }

    pub fn outputs(&self) -> Vec<NodeId> {
        self.role_nodes(NodeRole::Output)
    }

    fn role_nodes(&self, role: NodeRole) -> Vec<NodeId> {
        (0..self.nodes.len()).filter(|&v| self.nodes[v].role == role).collect()
    }

    pub fn input_shape(&self) -> Dim3 {
        self.shapes[self.inputs()[0]]
    }

    pub fn output_shape(&self) -> Dim3 {
        self.shapes[self.outputs()[0]]
    }

    pub fn node_by_name(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn trainable_edges(&self) -> Vec<EdgeId> {
        (0..self.edges.len()).filter(|&e| self.edges[e].op.is_trainable()).collect()
    }

    /// Longest path length (in edges) from each node to any output.
    pub fn depth_to_output(&self) -> Vec<usize> {
        let mut d = vec![0; self.nodes.len()];
        for &v in self.topo.iter().rev() {
            d[v] = self.out_edges[v].iter().map(|&e| d[self.edges[e].to] + 1).max().unwrap_or(0);
        }
        d
    }

    /// Longest path length (in edges) from any input to each node.
    pub fn depth_from_input(&self) -> Vec<usize> {
        let mut d = vec![0; self.nodes.len()];
        for &v in &self.topo {
            d[v] = self.in_edges[v].iter().map(|&e| d[self.edges[e].from] + 1).max().unwrap_or(0);
        }
        d
    }

    /// Replaces every max-pooling edge by a max-filter and dilates everything
    /// downstream, so that the net computes all sliding-window outputs densely.
    pub fn to_sliding_equivalent(&self) -> Result<NetGraph> {
        sliding::to_sliding_equivalent(self)
    }

    /// Same graph re-anchored at a different input shape.
    pub fn reshaped_from_input(&self, input_shape: Dim3) -> Result<NetGraph> {
        let mut g = self.clone();
        g.shapes = g.infer_shapes_forward(input_shape)?;
        Ok(g)
    }
}

fn check_positive(d: Dim3) -> Result<()> {
    if d.contains(&0) {
        return Err(Error::Graph(format!("shape {d:?} has a zero extent")));
    }
    Ok(())
}

impl fmt::Display for NetGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} nodes, {} edges", self.nodes.len(), self.edges.len())?;
        for (i, e) in self.edges.iter().enumerate() {
            writeln!(
                f,
                "  e{i} {} -> {} {} {:?} -> {:?}",
                self.nodes[e.from].name,
                self.nodes[e.to].name,
                e.op.name(),
                self.shapes.get(e.from),
                self.shapes.get(e.to)
            )?;
        }
        Ok(())
    }
}
