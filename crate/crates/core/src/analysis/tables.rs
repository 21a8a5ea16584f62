use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CostMode {
    Direct,
    Fft,
    FftMemo,
}

impl FromStr for CostMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(CostMode::Direct),
            "fft" => Ok(CostMode::Fft),
            "fft-memo" | "fft_memoized" | "memo" => Ok(CostMode::FftMemo),
            other => Err(Error::Config(format!("unknown cost mode `{other}`"))),
        }
    }
}

impl fmt::Display for CostMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CostMode::Direct => "direct",
            CostMode::Fft => "fft",
            CostMode::FftMemo => "fft-memo",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CostPass {
    Forward,
    Backward,
    Update,
    Total,
}

pub const FFT_CONSTANT: f64 = 5.0;

/// Cost parameters of a convolutional layer mapping `f` images to `f_out`.
///
/// Sizes are stored as voxel counts so that non-cubic images fit the same
/// formulas: `n³` becomes `v`, `n'³` becomes `v_out`, `k³` becomes `kv`,
/// and `3·n³·log₂ n` becomes `v·log₂ v`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerCost {
    pub f: f64,
    pub f_out: f64,
    /// Number of kernels; `f·f_out` for a fully connected layer.
    pub pairs: f64,
    pub v: f64,
    pub v_out: f64,
    pub kv: f64,
    /// Largest number of convolutions converging on one output image.
    pub fan_in: f64,
    /// Largest number of convolutions leaving one input image.
    pub fan_out: f64,
    pub c: f64,
}

impl LayerCost {
    /// Fully connected layer on `n³` images with `k³` kernels; `n' = n-k+1`.
    pub fn cubic(f: usize, f_out: usize, n: usize, k: usize) -> Self {
        let cube = |x: usize| (x * x * x) as f64;
        LayerCost {
            f: f as f64,
            f_out: f_out as f64,
            pairs: (f * f_out) as f64,
            v: cube(n),
            v_out: cube(n + 1 - k),
            kv: cube(k),
            fan_in: f as f64,
            fan_out: f_out as f64,
            c: FFT_CONSTANT,
        }
    }

    pub fn with_c(mut self, c: f64) -> Self {
        self.c = c;
        self
    }

    /// `C·n³·log₂ n³`: one 3D transform of the layer's image box.
    fn transform(&self) -> f64 {
        self.c * self.v * self.v.log2()
    }
}

fn ceil_log2(x: f64) -> f64 {
    if x <= 1.0 {
        0.0
    } else {
        x.log2().ceil()
    }
}

/// FLOPs of a convolutional layer.
pub fn flops_conv_layer(c: &LayerCost, mode: CostMode, pass: CostPass) -> f64 {
    if pass == CostPass::Total {
        return [CostPass::Forward, CostPass::Backward, CostPass::Update]
            .iter()
            .map(|&p| flops_conv_layer(c, mode, p))
            .sum();
    }
    let pointwise = 4.0 * c.pairs * c.v;
    let all = c.f_out + c.f + c.pairs;
    match (mode, pass) {
        (CostMode::Direct, _) => c.pairs * c.v_out * c.kv,
        (CostMode::Fft, _) | (CostMode::FftMemo, CostPass::Forward) => c.transform() * all + pointwise,
        (CostMode::FftMemo, CostPass::Backward) => c.transform() * (c.f_out + c.f) + pointwise,
        (CostMode::FftMemo, _) => c.transform() * c.pairs + pointwise,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NonConvKind {
    Pooling,
    Filtering,
    Transfer,
}

/// FLOPs of a layer of `f` identical nonlinear operations on images of
/// `v` voxels; `kv` is the filter window volume (ignored otherwise).
pub fn flops_nonconv_layer(f: f64, v: f64, kv: f64, kind: NonConvKind, pass: CostPass) -> f64 {
    f * t_inf_nonconv(v, kv, kind, pass)
}

/// Span of one fully parallel layer of nonlinear operations.
pub fn t_inf_nonconv(v: f64, kv: f64, kind: NonConvKind, pass: CostPass) -> f64 {
    match pass {
        CostPass::Total => [CostPass::Forward, CostPass::Backward, CostPass::Update]
            .iter()
            .map(|&p| t_inf_nonconv(v, kv, kind, p))
            .sum(),
        // 6 n³ log₂ k = 2 n³ log₂ k³
        CostPass::Forward if kind == NonConvKind::Filtering => 2.0 * v * kv.log2(),
        CostPass::Forward | CostPass::Backward => v,
        CostPass::Update if kind == NonConvKind::Transfer => v,
        CostPass::Update => 0.0,
    }
}

/// Span of a convolutional layer with unboundedly many processors,
/// including the `⌈log₂ f⌉` binary-collapse summation.
pub fn t_inf_conv(c: &LayerCost, mode: CostMode, pass: CostPass) -> f64 {
    if pass == CostPass::Total {
        return [CostPass::Forward, CostPass::Backward, CostPass::Update].iter().map(|&p| t_inf_conv(c, mode, p)).sum();
    }
    let direct = c.v_out * c.kv;
    match (mode, pass) {
        (CostMode::Direct, CostPass::Forward) => direct + c.v_out * ceil_log2(c.fan_in),
        // the backward row mixes n' and n
        (CostMode::Direct, CostPass::Backward) => direct + c.v * ceil_log2(c.fan_out),
        (CostMode::Direct, _) => direct,
        (_, CostPass::Forward) => 2.0 * c.transform() + 4.0 * c.v * ceil_log2(c.fan_in),
        (_, CostPass::Backward) => 2.0 * c.transform() + 4.0 * c.v * ceil_log2(c.fan_out),
        (CostMode::Fft, _) => 2.0 * c.transform() + 4.0 * c.v,
        (CostMode::FftMemo, _) => c.transform() + 4.0 * c.v,
    }
}

/// Brent lower bound on the speedup with `p` processors.
pub fn brent_speedup(t1: f64, t_inf: f64, p: f64) -> Result<f64> {
    if !(t_inf > 0.0) {
        return Err(Error::Domain(format!("span must be positive, got {t_inf}")));
    }
    if t1 < t_inf {
        return Err(Error::Domain(format!("work {t1} is smaller than span {t_inf}")));
    }
    if !(p >= 1.0) {
        return Err(Error::Domain(format!("processor count must be at least 1, got {p}")));
    }
    let s_inf = t1 / t_inf;
    Ok(s_inf / (1.0 + (s_inf - 1.0) / p))
}

/// Smallest kernel side for which an FFT layer of width `f` (square,
/// `f = f'`) needs fewer FLOPs than direct convolution, on `n³` images.
pub fn crossover_kernel_size(n: usize, c: f64, f: usize, memoized: bool) -> Option<usize> {
    let mode = if memoized { CostMode::FftMemo } else { CostMode::Fft };
    (1..=n).find(|&k| {
        let l = LayerCost::cubic(f, f, n, k).with_c(c);
        flops_conv_layer(&l, mode, CostPass::Total) < flops_conv_layer(&l, CostMode::Direct, CostPass::Total)
    })
}
