//! Straight-line trainer: one forward sweep in topological order, one
//! backward sweep in reverse, then all updates. No tasks, no threads, no
//! FFT. Used as the oracle for the engine.

use crate::convolution::{conv_full_direct, conv_valid_direct, kernel_gradient};
use crate::error::Result;
use crate::netgraph::{EdgeOp, NetGraph, NodeRole};
use crate::taskgraph::{loss_and_gradient, EdgeParam, Params, Sample};
use crate::tensor_ops::{
    bias_gradient, maxfilter_backward, maxfilter_forward, maxpool_backward, maxpool_forward, transfer_backward,
    transfer_forward, ArgmaxRecord, Scalar, TransferFn, Volume,
};

pub struct ForwardPass<T: Scalar> {
    /// Image at every node.
    pub images: Vec<Volume<T>>,
    records: Vec<Option<ArgmaxRecord>>,
}

fn bias<T: Scalar>(p: &Params<T>, e: usize) -> T {
    match p.edges[e] {
        EdgeParam::Bias(b) => b,
        _ => panic!("edge {e} has no bias"),
    }
}

pub fn forward<T: Scalar>(g: &NetGraph, p: &Params<T>, inputs: &[Volume<T>]) -> Result<ForwardPass<T>> {
    let mut images: Vec<Option<Volume<T>>> = vec![None; g.nodes().len()];
    let mut records = vec![None; g.edges().len()];
    for (&v, x) in g.inputs().iter().zip(inputs) {
        images[v] = Some(x.clone());
    }
    for &v in g.topo_order() {
        if g.node(v).role == NodeRole::Input {
            continue;
        }
        let mut acc: Option<Volume<T>> = None;
        for &e in g.in_edges(v) {
            let edge = g.edge(e);
            let x = images[edge.from].as_ref().expect("topological order");
            let y = match (&edge.op, &p.edges[e]) {
                (EdgeOp::Conv { .. }, EdgeParam::Kernel(k)) => conv_valid_direct(x, k)?,
                (EdgeOp::Transfer { kind }, _) => transfer_forward(x, &TransferFn { kind: *kind, bias: bias(p, e) }),
                (EdgeOp::MaxPool(s), _) => {
                    let (y, r) = maxpool_forward(x, s)?;
                    records[e] = Some(r);
                    y
                }
                (EdgeOp::MaxFilter(s), _) => {
                    let (y, r) = maxfilter_forward(x, s)?;
                    records[e] = Some(r);
                    y
                }
                _ => panic!("parameter kind does not match edge {e}"),
            };
            match acc.as_mut() {
                None => acc = Some(y),
                Some(a) => a.add_assign(&y),
            }
        }
        images[v] = acc;
    }
    Ok(ForwardPass { images: images.into_iter().map(|i| i.expect("every node computed")).collect(), records })
}

/// Network outputs in output-node order.
pub fn outputs<T: Scalar>(g: &NetGraph, p: &Params<T>, inputs: &[Volume<T>]) -> Result<Vec<Volume<T>>> {
    let f = forward(g, p, inputs)?;
    Ok(g.outputs().iter().map(|&v| f.images[v].clone()).collect())
}

pub fn loss<T: Scalar>(g: &NetGraph, p: &Params<T>, s: &Sample<T>) -> Result<f64> {
    let outs = outputs(g, p, &s.inputs)?;
    let mut total = 0.0;
    for (a, d) in outs.iter().zip(&s.desired) {
        total += loss_and_gradient(a, d)?.0;
    }
    Ok(total)
}

/// Loss and the gradient of every parameter.
pub fn gradients<T: Scalar>(g: &NetGraph, p: &Params<T>, s: &Sample<T>) -> Result<(f64, Params<T>)> {
    let fwd = forward(g, p, &s.inputs)?;
    let mut grads: Vec<Option<Volume<T>>> = vec![None; g.nodes().len()];
    let mut total = 0.0;
    for (&v, d) in g.outputs().iter().zip(&s.desired) {
        let (l, gr) = loss_and_gradient(&fwd.images[v], d)?;
        total += l;
        grads[v] = Some(gr);
    }
    let mut out = p.clone();
    for &v in g.topo_order().iter().rev() {
        if g.node(v).role == NodeRole::Output {
            continue;
        }
        let mut acc: Option<Volume<T>> = None;
        for &e in g.out_edges(v) {
            let edge = g.edge(e);
            let gv = grads[edge.to].as_ref().expect("reverse topological order");
            let x = &fwd.images[v];
            let back = match (&edge.op, &p.edges[e]) {
                (EdgeOp::Conv { sparsity, .. }, EdgeParam::Kernel(k)) => {
                    let gk = kernel_gradient(x, gv, *sparsity)?;
                    out.edges[e] = EdgeParam::Kernel(crate::convolution::Kernel { weights: gk, sparsity: *sparsity });
                    conv_full_direct(gv, &k.reflected())?
                }
                (EdgeOp::Transfer { kind }, _) => {
                    let b = transfer_backward(gv, x, &TransferFn { kind: *kind, bias: bias(p, e) })?;
                    out.edges[e] = EdgeParam::Bias(bias_gradient(&b));
                    b
                }
                (EdgeOp::MaxPool(s), _) => maxpool_backward(gv, fwd.records[e].as_ref().expect("record"), s)?,
                (EdgeOp::MaxFilter(s), _) => {
                    maxfilter_backward(gv, fwd.records[e].as_ref().expect("record"), s, x.dims())?
                }
                _ => panic!("parameter kind does not match edge {e}"),
            };
            match acc.as_mut() {
                None => acc = Some(back),
                Some(a) => a.add_assign(&back),
            }
        }
        grads[v] = acc;
    }
    Ok((total, out))
}

/// One SGD step; returns the loss before the step.
pub fn train_step<T: Scalar>(g: &NetGraph, p: &mut Params<T>, s: &Sample<T>, lr: f64) -> Result<f64> {
    let (l, grad) = gradients(g, p, s)?;
    for (e, (param, gr)) in p.edges.iter_mut().zip(&grad.edges).enumerate() {
        let eta = T::of(g.edge(e).lr.unwrap_or(lr));
        match (param, gr) {
            (EdgeParam::Kernel(k), EdgeParam::Kernel(gk)) => k.weights.sub_scaled(eta, &gk.weights),
            (EdgeParam::Bias(b), EdgeParam::Bias(gb)) => *b -= eta * *gb,
            _ => {}
        }
    }
    Ok(l)
}
