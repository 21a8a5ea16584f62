use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::convolution::{
    conv_full_direct, conv_valid_direct, fft_conv_full, fft_conv_valid, fft_kernel_gradient, kernel_gradient, ConvMode,
    FftPlanCache, Kernel,
};
use crate::error::Result;
use crate::netgraph::{EdgeId, EdgeOp, NetGraph};
use crate::tensor_ops::{Dim3, Scalar, Volume};

/// Timing outcome for one convolutional layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerChoice {
    /// Longest path from an input to the layer's tail nodes.
    pub depth: usize,
    pub edges: Vec<EdgeId>,
    pub direct_s: f64,
    pub fft_s: f64,
    pub mode: ConvMode,
}

/// Conv edges grouped by the depth of their tail node.
pub fn conv_layers(g: &NetGraph) -> BTreeMap<usize, Vec<EdgeId>> {
    let depth = g.depth_from_input();
    let mut out: BTreeMap<usize, Vec<EdgeId>> = BTreeMap::new();
    for (e, edge) in g.edges().iter().enumerate() {
        if edge.op.is_conv() {
            out.entry(depth[edge.from]).or_default().push(e);
        }
    }
    out
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn random<T: Scalar>(rng: &mut ChaCha8Rng, d: Dim3) -> Volume<T> {
    Volume::from_fn(d, |_, _, _| T::of(rng.random_range(-1.0..1.0)))
}

/// Median wall time of forward, backward and update of one edge of shape
/// `input -> output` with each engine.
pub fn time_edge<T: Scalar>(
    input: Dim3,
    output: Dim3,
    kernel: Dim3,
    sparsity: Dim3,
    trials: usize,
) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = random::<T>(&mut rng, input);
    let g = random::<T>(&mut rng, output);
    let k = Kernel::new(random(&mut rng, kernel), sparsity)?;
    let refl = k.reflected();
    let cache = FftPlanCache::new();
    let direct = || -> Result<()> {
        conv_valid_direct(&x, &k)?;
        conv_full_direct(&g, &refl)?;
        kernel_gradient(&x, &g, sparsity)?;
        Ok(())
    };
    let fft = || -> Result<()> {
        fft_conv_valid(&x, &k, &cache, None)?;
        fft_conv_full(&g, &refl, &cache, None)?;
        fft_kernel_gradient(&x, &g, sparsity, &cache)?;
        Ok(())
    };
    // plans are built on first use and should not be timed
    fft()?;
    let time = |f: &dyn Fn() -> Result<()>| -> Result<f64> {
        let mut ts = Vec::with_capacity(trials);
        for _ in 0..trials.max(1) {
            let t = Instant::now();
            f()?;
            ts.push(t.elapsed().as_secs_f64());
        }
        Ok(median(ts))
    };
    Ok((time(&direct)?, time(&fft)?))
}

/// Picks the faster engine for every convolutional layer, timing one
/// representative edge per layer. Returns per-edge modes and the choices.
pub fn autotune<T: Scalar>(g: &NetGraph, trials: usize) -> Result<(Vec<ConvMode>, Vec<LayerChoice>)> {
    let mut modes = vec![ConvMode::Direct; g.edges().len()];
    let mut choices = Vec::new();
    for (depth, edges) in conv_layers(g) {
        let e = g.edge(edges[0]);
        let EdgeOp::Conv { kernel, sparsity } = e.op else { unreachable!("conv layer") };
        let (direct_s, fft_s) = time_edge::<T>(g.shape(e.from), g.shape(e.to), kernel, sparsity, trials)?;
        let mode = if fft_s < direct_s { ConvMode::Fft } else { ConvMode::Direct };
        for &e in &edges {
            modes[e] = mode;
        }
        choices.push(LayerChoice { depth, edges, direct_s, fft_s, mode });
    }
    Ok((modes, choices))
}
