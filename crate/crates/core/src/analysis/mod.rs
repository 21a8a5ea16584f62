//! Symbolic FLOP model of one training round: per-layer work and span,
//! network totals and the speedup bound they imply.

mod tables;

use std::collections::BTreeMap;

pub use tables::{
    brent_speedup, crossover_kernel_size, flops_conv_layer, flops_nonconv_layer, t_inf_conv, t_inf_nonconv, CostMode,
    CostPass, LayerCost, NonConvKind, FFT_CONSTANT,
};

use crate::error::{Error, Result};
use crate::netgraph::{EdgeOp, LayeredSpec, NetGraph};
use crate::tensor_ops::{voxels, Dim3};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LayerModel {
    Conv(LayerCost),
    /// `f` parallel operations on images of `v` voxels, window `kv` voxels.
    NonConv {
        kind: NonConvKind,
        f: f64,
        v: f64,
        kv: f64,
    },
}

impl LayerModel {
    pub fn work(&self, mode: CostMode, pass: CostPass) -> f64 {
        match *self {
            LayerModel::Conv(c) => flops_conv_layer(&c, mode, pass),
            LayerModel::NonConv { kind, f, v, kv } => flops_nonconv_layer(f, v, kv, kind, pass),
        }
    }

    pub fn span(&self, mode: CostMode, pass: CostPass) -> f64 {
        t_inf_layer(self, mode, pass)
    }
}

pub fn t_inf_layer(l: &LayerModel, mode: CostMode, pass: CostPass) -> f64 {
    match *l {
        LayerModel::Conv(c) => t_inf_conv(&c, mode, pass),
        LayerModel::NonConv { kind, v, kv, .. } => t_inf_nonconv(v, kv, kind, pass),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NetCost {
    pub t1: f64,
    pub t_inf: f64,
}

impl NetCost {
    pub fn s_inf(&self) -> f64 {
        self.t1 / self.t_inf
    }

    pub fn bound(&self, p: usize) -> Result<f64> {
        brent_speedup(self.t1, self.t_inf, p as f64)
    }
}

/// Work is the sum over all layers and passes. The span runs the forward
/// chain, then the backward chain; updates of different layers overlap with
/// each other, so only the slowest one is added.
pub fn network_cost(layers: &[LayerModel], mode: CostMode) -> NetCost {
    let t1 = layers.iter().map(|l| l.work(mode, CostPass::Total)).sum();
    let fwd: f64 = layers.iter().map(|l| l.span(mode, CostPass::Forward)).sum();
    let bwd: f64 = layers.iter().map(|l| l.span(mode, CostPass::Backward)).sum();
    let upd = layers.iter().map(|l| l.span(mode, CostPass::Update)).fold(0.0, f64::max);
    NetCost { t1, t_inf: fwd + bwd + upd }
}

fn vox(d: Dim3) -> f64 {
    voxels(d) as f64
}

/// Groups edges into layers by the depth of their tail and their operation.
pub fn layers_from_graph(g: &NetGraph, c: f64) -> Vec<LayerModel> {
    let depth = g.depth_from_input();
    let mut groups: BTreeMap<(usize, &'static str), Vec<usize>> = BTreeMap::new();
    for (e, edge) in g.edges().iter().enumerate() {
        groups.entry((depth[edge.from], edge.op.name())).or_default().push(e);
    }
    groups
        .into_values()
        .map(|es| {
            let first = g.edge(es[0]);
            let v = es.iter().map(|&e| vox(g.shape(g.edge(e).from))).fold(0.0, f64::max);
            match first.op {
                EdgeOp::Conv { kernel, .. } => {
                    let mut tails: BTreeMap<usize, usize> = BTreeMap::new();
                    let mut heads: BTreeMap<usize, usize> = BTreeMap::new();
                    for &e in &es {
                        *tails.entry(g.edge(e).from).or_default() += 1;
                        *heads.entry(g.edge(e).to).or_default() += 1;
                    }
                    LayerModel::Conv(LayerCost {
                        f: tails.len() as f64,
                        f_out: heads.len() as f64,
                        pairs: es.len() as f64,
                        v,
                        v_out: es.iter().map(|&e| vox(g.shape(g.edge(e).to))).fold(0.0, f64::max),
                        kv: vox(kernel),
                        fan_in: *heads.values().max().unwrap_or(&1) as f64,
                        fan_out: *tails.values().max().unwrap_or(&1) as f64,
                        c,
                    })
                }
                ref op => {
                    let (kind, kv) = match op {
                        EdgeOp::MaxPool(_) => (NonConvKind::Pooling, 1.0),
                        EdgeOp::MaxFilter(f) => (NonConvKind::Filtering, vox(f.k)),
                        _ => (NonConvKind::Transfer, 1.0),
                    };
                    LayerModel::NonConv { kind, f: es.len() as f64, v, kv }
                }
            }
        })
        .collect()
}

/// Same layers as `layers_from_graph(&layered(spec)?, c)`, without building the graph.
pub fn layers_from_spec(spec: &LayeredSpec, c: f64) -> Result<Vec<LayerModel>> {
    let seq: Vec<char> = spec.seq.chars().filter(|c| !c.is_whitespace()).collect();
    if seq.is_empty() || spec.width == 0 || spec.inputs == 0 || spec.outputs == 0 {
        return Err(Error::Config("layered net needs a sequence and positive widths".into()));
    }
    let last_conv = seq.iter().rposition(|&c| c == 'C');
    // sparsity seen by every layer, then image sizes from the output back
    let mut sparsity = Vec::with_capacity(seq.len());
    let mut s = [1, 1, 1];
    for &ch in &seq {
        sparsity.push(s);
        if ch == 'M' {
            s = [0, 1, 2].map(|a| s[a] * spec.pool[a]);
        }
    }
    let mut sizes = vec![spec.output; seq.len() + 1];
    for (li, &ch) in seq.iter().enumerate().rev() {
        let out = sizes[li + 1];
        let s = sparsity[li];
        sizes[li] = match ch {
            'C' => [0, 1, 2].map(|a| out[a] + s[a] * (spec.kernel[a] - 1)),
            'M' => [0, 1, 2].map(|a| out[a] + s[a] * (spec.pool[a] - 1)),
            'P' => [0, 1, 2].map(|a| out[a] * spec.pool[a]),
            'T' => out,
            other => return Err(Error::Config(format!("unknown layer letter `{other}`"))),
        };
    }
    let mut width = spec.inputs;
    let mut layers = Vec::with_capacity(seq.len());
    for (li, &ch) in seq.iter().enumerate() {
        let v = vox(sizes[li]);
        let layer = match ch {
            'C' => {
                let w = if Some(li) == last_conv { spec.outputs } else { spec.width };
                let l = LayerCost {
                    f: width as f64,
                    f_out: w as f64,
                    pairs: (width * w) as f64,
                    v,
                    v_out: vox(sizes[li + 1]),
                    kv: vox(spec.kernel),
                    fan_in: width as f64,
                    fan_out: w as f64,
                    c,
                };
                width = w;
                LayerModel::Conv(l)
            }
            'M' => LayerModel::NonConv { kind: NonConvKind::Filtering, f: width as f64, v, kv: vox(spec.pool) },
            'P' => LayerModel::NonConv { kind: NonConvKind::Pooling, f: width as f64, v, kv: 1.0 },
            _ => LayerModel::NonConv { kind: NonConvKind::Transfer, f: width as f64, v, kv: 1.0 },
        };
        layers.push(layer);
    }
    Ok(layers)
}

/// Net family of the achievable-speedup curves: `depth` convolution and
/// transfer layer pairs of constant width, 5³ kernels, 12³ output.
pub fn curve_spec(width: usize, depth: usize) -> LayeredSpec {
    LayeredSpec {
        seq: "CT".repeat(depth),
        width,
        inputs: width,
        outputs: width,
        kernel: [5, 5, 5],
        output: [12, 12, 12],
        ..LayeredSpec::default()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub width: usize,
    pub depth: usize,
    pub procs: usize,
    pub t1: f64,
    pub t_inf: f64,
    pub bound: f64,
}

/// Evaluates the bound for every (width, depth, P) triple. `make` turns a
/// (width, depth) pair into a net description.
pub fn sweep<F>(
    widths: &[usize],
    depths: &[usize],
    procs: &[usize],
    mode: CostMode,
    c: f64,
    make: F,
) -> Result<Vec<SweepRow>>
where
    F: Fn(usize, usize) -> LayeredSpec + Sync,
{
    let pairs: Vec<(usize, usize)> = depths.iter().flat_map(|&d| widths.iter().map(move |&w| (w, d))).collect();
    let eval = |&(width, depth): &(usize, usize)| -> Result<Vec<SweepRow>> {
        let cost = network_cost(&layers_from_spec(&make(width, depth), c)?, mode);
        procs
            .iter()
            .map(|&p| Ok(SweepRow { width, depth, procs: p, t1: cost.t1, t_inf: cost.t_inf, bound: cost.bound(p)? }))
            .collect()
    };
    #[cfg(feature = "parallel")]
    let chunks: Vec<Result<Vec<SweepRow>>> = {
        use rayon::prelude::*;
        pairs.par_iter().map(eval).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let chunks: Vec<Result<Vec<SweepRow>>> = pairs.iter().map(eval).collect();
    let mut out = Vec::new();
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

/// Sequential version of [`sweep`], kept for benchmarking against it.
pub fn sweep_sequential<F>(
    widths: &[usize],
    depths: &[usize],
    procs: &[usize],
    mode: CostMode,
    c: f64,
    make: F,
) -> Result<Vec<SweepRow>>
where
    F: Fn(usize, usize) -> LayeredSpec,
{
    let mut out = Vec::new();
    for &depth in depths {
        for &width in widths {
            let cost = network_cost(&layers_from_spec(&make(width, depth), c)?, mode);
            for &p in procs {
                out.push(SweepRow { width, depth, procs: p, t1: cost.t1, t_inf: cost.t_inf, bound: cost.bound(p)? });
            }
        }
    }
    Ok(out)
}

/// Smallest width whose bound reaches `frac · P`, scanning `widths` in order.
pub fn width_reaching(rows: &[SweepRow], depth: usize, procs: usize, frac: f64) -> Option<usize> {
    rows.iter()
        .filter(|r| r.depth == depth && r.procs == procs && r.bound >= frac * procs as f64)
        .map(|r| r.width)
        .min()
}
