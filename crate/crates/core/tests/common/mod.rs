#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use znn::netgraph::{layered, LayeredSpec, NetGraph};
use znn::taskgraph::Sample;
use znn::tensor_ops::{Dim3, Scalar, Volume};

pub fn random_volume<T: Scalar>(rng: &mut ChaCha8Rng, d: Dim3, lo: f64, hi: f64) -> Volume<T> {
    Volume::from_fn(d, |_, _, _| T::of(rng.random_range(lo..hi)))
}

pub fn random_sample<T: Scalar>(g: &NetGraph, seed: u64) -> Sample<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Sample {
        inputs: g.inputs().iter().map(|&v| random_volume(&mut rng, g.shape(v), 0.0, 1.0)).collect(),
        desired: g.outputs().iter().map(|&v| random_volume(&mut rng, g.shape(v), -0.5, 0.5)).collect(),
    }
}

pub fn net(seq: &str, width: usize, kernel: usize, output: usize) -> NetGraph {
    layered(&LayeredSpec {
        seq: seq.into(),
        width,
        kernel: [kernel; 3],
        output: [output; 3],
        transfer: znn::tensor_ops::TransferKind::Tanh,
        ..Default::default()
    })
    .unwrap()
}

pub mod checks;
pub mod conv;
pub mod cost;
pub mod pool;
