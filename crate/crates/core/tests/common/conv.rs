use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use znn::convolution::{
    conv_full_direct, conv_valid_direct, fft_conv_full, fft_conv_valid, fft_kernel_gradient, kernel_gradient,
    FftPlanCache, Kernel,
};
use znn::tensor_ops::{Dim3, Scalar, Volume};

use super::random_volume;

/// Elementwise relative error of `got` against `want`. Entries far below the
/// largest magnitude are measured against `floor * max|want|`.
pub fn rel_error<T: Scalar>(got: &Volume<T>, want: &Volume<T>, floor: f64) -> f64 {
    assert_eq!(got.dims(), want.dims());
    let scale = want.as_slice().iter().map(|v| v.to_f64().unwrap().abs()).fold(0.0, f64::max);
    let lo = (floor * scale).max(f64::MIN_POSITIVE);
    got.as_slice()
        .iter()
        .zip(want.as_slice())
        .map(|(a, b)| {
            let (a, b) = (a.to_f64().unwrap(), b.to_f64().unwrap());
            (a - b).abs() / b.abs().max(lo)
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug)]
pub struct ConvCase {
    pub input: Dim3,
    pub kernel: Dim3,
    pub sparsity: Dim3,
}

/// Random shapes: kernel 1..=5 per axis, sparsity 1..=3 with a bias towards
/// 2, input at least the effective kernel plus 0..=6.
pub fn random_case(rng: &mut ChaCha8Rng) -> ConvCase {
    let s = rng.random_range(1..=3);
    let sparsity = if rng.random_bool(0.5) { [2; 3] } else { [s, rng.random_range(1..=2), s] };
    let kernel = [0; 3].map(|_| rng.random_range(1..=5));
    let input = [0, 1, 2].map(|a| (kernel[a] - 1) * sparsity[a] + 1 + rng.random_range(0..=6));
    ConvCase { input, kernel, sparsity }
}

/// Worst relative error of FFT against direct over valid, full and kernel
/// gradient for one case.
pub fn conv_agreement<T: Scalar>(case: &ConvCase, seed: u64, floor: f64) -> [f64; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Volume<T> = random_volume(&mut rng, case.input, -1.0, 1.0);
    let k = Kernel::new(random_volume(&mut rng, case.kernel, -1.0, 1.0), case.sparsity).unwrap();
    let cache = FftPlanCache::new();

    let y = conv_valid_direct(&x, &k).unwrap();
    let valid = rel_error(&fft_conv_valid(&x, &k, &cache, None).unwrap(), &y, floor);

    let g: Volume<T> = random_volume(&mut rng, y.dims(), -1.0, 1.0);
    let kr = k.reflected();
    let back = conv_full_direct(&g, &kr).unwrap();
    let full = rel_error(&fft_conv_full(&g, &kr, &cache, None).unwrap(), &back, floor);

    let gk = kernel_gradient(&x, &g, case.sparsity).unwrap();
    let grad = rel_error(&fft_kernel_gradient(&x, &g, case.sparsity, &cache).unwrap(), &gk, floor);
    [valid, full, grad]
}
