use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::convolution::Kernel;
use crate::netgraph::{EdgeOp, NetGraph};
use crate::tensor_ops::{voxels, Scalar, Volume};

#[derive(Clone, Debug, PartialEq)]
pub enum EdgeParam<T: Scalar> {
    Kernel(Kernel<T>),
    Bias(T),
    /// Pooling and filtering edges have nothing to train.
    Fixed,
}

/// Trainable parameters of every edge, indexed by edge id.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T: Scalar> {
    pub edges: Vec<EdgeParam<T>>,
}

impl<T: Scalar> Params<T> {
    /// Kernels uniform in `±1/sqrt(fan_in)` with `fan_in` the head node's
    /// in-degree times the kernel volume; biases zero.
    pub fn init(g: &NetGraph, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let edges = g
            .edges()
            .iter()
            .map(|e| match e.op {
                EdgeOp::Conv { kernel, sparsity } => {
                    let fan_in = g.in_edges(e.to).len() * voxels(kernel);
                    let r = 1.0 / (fan_in as f64).sqrt();
                    let w = Volume::from_fn(kernel, |_, _, _| T::of(rng.random_range(-r..r)));
                    EdgeParam::Kernel(Kernel { weights: w, sparsity })
                }
                EdgeOp::Transfer { .. } => EdgeParam::Bias(T::zero()),
                _ => EdgeParam::Fixed,
            })
            .collect();
        Params { edges }
    }

    /// All trainable values in edge order.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for p in &self.edges {
            match p {
                EdgeParam::Kernel(k) => out.extend(k.weights.as_slice().iter().map(|v| v.f64())),
                EdgeParam::Bias(b) => out.push(b.f64()),
                EdgeParam::Fixed => {}
            }
        }
        out
    }

    /// Overwrites the trainable value at flat position `i`.
    pub fn set_flat(&mut self, i: usize, value: f64) {
        let mut i = i;
        for p in &mut self.edges {
            match p {
                EdgeParam::Kernel(k) => {
                    let w = k.weights.as_mut_slice();
                    if i < w.len() {
                        w[i] = T::of(value);
                        return;
                    }
                    i -= w.len();
                }
                EdgeParam::Bias(b) => {
                    if i == 0 {
                        *b = T::of(value);
                        return;
                    }
                    i -= 1;
                }
                EdgeParam::Fixed => {}
            }
        }
        panic!("parameter index out of range");
    }

    /// `max |a - b| / max |b|` over all trainable values.
    pub fn max_rel_diff(&self, reference: &Params<T>) -> f64 {
        let (a, b) = (self.flat(), reference.flat());
        assert_eq!(a.len(), b.len(), "parameter sets differ in size");
        let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        a.iter().zip(&b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        Params {
            edges: self
                .edges
                .iter()
                .map(|p| match p {
                    EdgeParam::Kernel(k) => {
                        EdgeParam::Kernel(Kernel { weights: k.weights.cast(), sparsity: k.sparsity })
                    }
                    EdgeParam::Bias(b) => EdgeParam::Bias(U::of(b.f64())),
                    EdgeParam::Fixed => EdgeParam::Fixed,
                })
                .collect(),
        }
    }
}
