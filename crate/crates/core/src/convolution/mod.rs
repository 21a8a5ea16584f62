//! Valid, full and sparse convolutions by direct summation and by FFT,
//! kernel gradients, and the per-iteration spectrum cache.
//!
//! Orientation: the forward "convolution" is a cross-correlation (no kernel
//! flip). Its transpose is a full correlation with the reflected kernel, so
//! [`reflect`](crate::tensor_ops::reflect) is the only place a flip happens.

mod direct;
mod fft;
mod memo;

pub use direct::{conv_full_direct, conv_valid_direct, dilate_kernel, kernel_gradient, kernel_gradient_dims};
pub use fft::{FftPlanCache, Pass, Spectrum, TransformCounts, TransformKind};
pub use memo::{MemoKey, MemoOwner, MemoRole, MemoStore};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor_ops::{reflect, Dim3, Scalar, Volume};

/// Convolution kernel with per-axis sparsity (dilation).
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel<T: Scalar> {
    pub weights: Volume<T>,
    pub sparsity: Dim3,
}

impl<T: Scalar> Kernel<T> {
    pub fn new(weights: Volume<T>, sparsity: Dim3) -> Result<Self> {
        if sparsity.contains(&0) {
            return Err(Error::structural("kernel", format!("sparsity {sparsity:?} must be positive")));
        }
        Ok(Kernel { weights, sparsity })
    }

    pub fn dense(weights: Volume<T>) -> Self {
        Kernel { weights, sparsity: [1, 1, 1] }
    }

    pub fn dims(&self) -> Dim3 {
        self.weights.dims()
    }

    /// `s(k-1)+1` per axis.
    pub fn effective(&self) -> Dim3 {
        effective_extent(self.weights.dims(), self.sparsity)
    }

    pub fn valid_output(&self, input: Dim3) -> Result<Dim3> {
        let ke = self.effective();
        if (0..3).any(|a| ke[a] > input[a]) {
            return Err(Error::structural(
                "conv_valid",
                format!("effective kernel {ke:?} larger than input {input:?}"),
            ));
        }
        Ok([0, 1, 2].map(|a| input[a] - ke[a] + 1))
    }

    pub fn reflected(&self) -> Kernel<T> {
        Kernel { weights: reflect(&self.weights), sparsity: self.sparsity }
    }
}

pub fn effective_extent(k: Dim3, s: Dim3) -> Dim3 {
    [0, 1, 2].map(|a| s[a] * (k[a] - 1) + 1)
}

/// Convolution engine for a layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum ConvMode {
    #[default]
    Direct,
    Fft,
}

impl FromStr for ConvMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(ConvMode::Direct),
            "fft" => Ok(ConvMode::Fft),
            other => Err(Error::Config(format!("unknown convolution mode `{other}`"))),
        }
    }
}

impl fmt::Display for ConvMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConvMode::Direct => "direct",
            ConvMode::Fft => "fft",
        })
    }
}

/// Cache keys for the image and kernel operands of one FFT convolution.
pub struct MemoRef<'a, T: Scalar> {
    pub store: &'a MemoStore<T>,
    pub image: MemoKey,
    pub kernel: MemoKey,
}

/// Spectrum of the dilated kernel zero-padded to `box_dims`.
pub fn kernel_spectrum<T: Scalar>(k: &Kernel<T>, box_dims: Dim3, cache: &FftPlanCache<T>, pass: Pass) -> Spectrum<T> {
    cache.forward(&dilate_kernel(k), box_dims, pass, TransformKind::Kernel)
}

/// Valid correlation from spectra over the input box: `x ⋆ k`.
pub fn valid_product<T: Scalar>(image: &Spectrum<T>, kernel: &Spectrum<T>) -> Spectrum<T> {
    image.mul_conj(kernel)
}

/// Transposed (backward) correlation from spectra: the full correlation of
/// `g` with the reflected kernel, over a box of extent `m + k_e - 1`.
pub fn transpose_product<T: Scalar>(grad: &Spectrum<T>, kernel: &Spectrum<T>) -> Spectrum<T> {
    grad.mul(kernel)
}

/// Kernel gradient from the forward-image and backward-image spectra over
/// the input box; the inverse transform is sampled at stride `s`.
pub fn gradient_from_spectra<T: Scalar>(
    image: &Spectrum<T>,
    grad: &Spectrum<T>,
    kernel_dims: Dim3,
    s: Dim3,
    cache: &FftPlanCache<T>,
    pass: Pass,
) -> Volume<T> {
    let ke = effective_extent(kernel_dims, s);
    let corr = cache.inverse(&image.mul_conj(grad), ke, pass);
    let mut out = corr.zeros_like(kernel_dims);
    for wx in 0..kernel_dims[0] {
        for wy in 0..kernel_dims[1] {
            for wz in 0..kernel_dims[2] {
                out.set(wx, wy, wz, corr.get(s[0] * wx, s[1] * wy, s[2] * wz));
            }
        }
    }
    out
}

/// FFT realisation of [`conv_valid_direct`]. Image and kernel are padded to
/// the image extent; the valid region sits at the origin of the result.
pub fn fft_conv_valid<T: Scalar>(
    x: &Volume<T>,
    k: &Kernel<T>,
    cache: &FftPlanCache<T>,
    memo: Option<MemoRef<'_, T>>,
) -> Result<Volume<T>> {
    let out_dims = k.valid_output(x.dims())?;
    let bx = x.dims();
    let (xs, ks) = match memo {
        Some(m) => (
            m.store.get_or_compute(m.image, || cache.forward(x, bx, Pass::Forward, TransformKind::Image)),
            m.store.get_or_compute(m.kernel, || kernel_spectrum(k, bx, cache, Pass::Forward)),
        ),
        None => (
            std::sync::Arc::new(cache.forward(x, bx, Pass::Forward, TransformKind::Image)),
            std::sync::Arc::new(kernel_spectrum(k, bx, cache, Pass::Forward)),
        ),
    };
    Ok(cache.inverse(&valid_product(&xs, &ks), out_dims, Pass::Forward))
}

/// FFT realisation of [`conv_full_direct`]: both operands are padded to
/// `n + k_e - 1` per axis. `memo.kernel` caches the reflected kernel's spectrum.
pub fn fft_conv_full<T: Scalar>(
    g: &Volume<T>,
    k: &Kernel<T>,
    cache: &FftPlanCache<T>,
    memo: Option<MemoRef<'_, T>>,
) -> Result<Volume<T>> {
    let ke = k.effective();
    let bx = [0, 1, 2].map(|a| g.dims()[a] + ke[a] - 1);
    // full_corr(g, k) == transpose of valid_corr(., reflect(k)).
    let refl = k.reflected();
    let (gs, ks) = match memo {
        Some(m) => (
            m.store.get_or_compute(m.image, || cache.forward(g, bx, Pass::Backward, TransformKind::Gradient)),
            m.store.get_or_compute(m.kernel, || kernel_spectrum(&refl, bx, cache, Pass::Backward)),
        ),
        None => (
            std::sync::Arc::new(cache.forward(g, bx, Pass::Backward, TransformKind::Gradient)),
            std::sync::Arc::new(kernel_spectrum(&refl, bx, cache, Pass::Backward)),
        ),
    };
    Ok(cache.inverse(&transpose_product(&gs, &ks), bx, Pass::Backward))
}

/// FFT realisation of [`kernel_gradient`].
pub fn fft_kernel_gradient<T: Scalar>(
    x_fwd: &Volume<T>,
    g_bwd: &Volume<T>,
    s: Dim3,
    cache: &FftPlanCache<T>,
) -> Result<Volume<T>> {
    let kd = kernel_gradient_dims(x_fwd.dims(), g_bwd.dims(), s)?;
    let bx = x_fwd.dims();
    let xs = cache.forward(x_fwd, bx, Pass::Update, TransformKind::Image);
    let gs = cache.forward(g_bwd, bx, Pass::Update, TransformKind::Gradient);
    Ok(gradient_from_spectra(&xs, &gs, kd, s, cache, Pass::Update))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vol(rng: &mut ChaCha8Rng, d: Dim3) -> Volume<f64> {
        Volume::from_fn(d, |_, _, _| rng.random_range(-1.0..1.0))
    }

    fn brute_valid(x: &Volume<f64>, k: &Kernel<f64>) -> Volume<f64> {
        let out = k.valid_output(x.dims()).unwrap();
        let kd = k.dims();
        let s = k.sparsity;
        Volume::from_fn(out, |a, b, c| {
            let mut acc = 0.0;
            for i in 0..kd[0] {
                for j in 0..kd[1] {
                    for l in 0..kd[2] {
                        acc += x.get(a + s[0] * i, b + s[1] * j, c + s[2] * l) * k.weights.get(i, j, l);
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn ones_sum_their_window() {
        let x = Volume::<f32>::filled([3, 3, 3], 1.0);
        let k = Kernel::dense(Volume::filled([2, 2, 2], 1.0));
        let y = conv_valid_direct(&x, &k).unwrap();
        assert_eq!(y.dims(), [2, 2, 2]);
        assert!(y.as_slice().iter().all(|&v| v == 8.0));
        let cache = FftPlanCache::new();
        let yf = fft_conv_valid(&x, &k, &cache, None).unwrap();
        assert!(yf.max_abs_diff(&y) < 1e-5);
    }

    #[test]
    fn delta_kernel_crops() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let x = rand_vol(&mut rng, [5, 5, 5]);
        let mut w = Volume::zeros([3, 3, 3]);
        w.set(1, 2, 0, 1.0);
        let k = Kernel::dense(w);
        let y = conv_valid_direct(&x, &k).unwrap();
        assert_eq!(y, x.crop([1, 2, 0], [3, 3, 3]).unwrap());
        let yf = fft_conv_valid(&x, &k, &FftPlanCache::new(), None).unwrap();
        assert!(yf.max_abs_diff(&y) < 1e-12);
    }

    #[test]
    fn sparse_single_voxel_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = rand_vol(&mut rng, [5, 5, 5]);
        let k = Kernel::new(rand_vol(&mut rng, [3, 3, 3]), [2, 2, 2]).unwrap();
        let y = conv_valid_direct(&x, &k).unwrap();
        assert_eq!(y.dims(), [1, 1, 1]);
        assert!((y.as_slice()[0] - brute_valid(&x, &k).as_slice()[0]).abs() < 1e-12);
    }

    #[test]
    fn valid_rejects_oversized_kernel() {
        let x = Volume::<f32>::zeros([4, 4, 4]);
        let k = Kernel::new(Volume::zeros([3, 3, 3]), [2, 1, 1]).unwrap();
        assert!(conv_valid_direct(&x, &k).is_err());
        assert!(Kernel::new(Volume::<f32>::zeros([1, 1, 1]), [0, 1, 1]).is_err());
    }

    #[test]
    fn full_impulse_response_is_reflected_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let k = Kernel::dense(rand_vol(&mut rng, [3, 3, 3]));
        let g = Volume::filled([1, 1, 1], 2.0);
        let y = conv_full_direct(&g, &k).unwrap();
        let mut expect = reflect(&k.weights);
        expect.scale(2.0);
        assert!(y.max_abs_diff(&expect) < 1e-12);
        let yf = fft_conv_full(&g, &k, &FftPlanCache::new(), None).unwrap();
        assert!(yf.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn full_with_center_delta_pads() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let g = rand_vol(&mut rng, [2, 3, 4]);
        let mut w = Volume::zeros([3, 3, 3]);
        w.set(1, 1, 1, 1.0);
        let y = conv_full_direct(&g, &Kernel::dense(w)).unwrap();
        assert_eq!(y.dims(), [4, 5, 6]);
        assert_eq!(y.crop([1, 1, 1], [2, 3, 4]).unwrap(), g);
        assert!((y.sum_f64() - g.sum_f64()).abs() < 1e-12);
    }

    #[test]
    fn full_is_adjoint_of_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let cache = FftPlanCache::new();
        for s in 1..=2 {
            let x = rand_vol(&mut rng, [7, 6, 8]);
            let k = Kernel::new(rand_vol(&mut rng, [2, 3, 2]), [s, s, 1]).unwrap();
            let y = conv_valid_direct(&x, &k).unwrap();
            let g = rand_vol(&mut rng, y.dims());
            let lhs = y.dot(&g);
            let back = conv_full_direct(&g, &k.reflected()).unwrap();
            assert!((lhs - x.dot(&back)).abs() < 1e-10);
            let back_f = fft_conv_full(&g, &k.reflected(), &cache, None).unwrap();
            assert!((lhs - x.dot(&back_f)).abs() < 1e-10);
        }
    }

    #[test]
    fn kernel_gradient_of_ones() {
        let x = Volume::<f32>::filled([3, 3, 3], 1.0);
        let g = Volume::<f32>::filled([2, 2, 2], 1.0);
        let grad = kernel_gradient(&x, &g, [1, 1, 1]).unwrap();
        assert_eq!(grad.dims(), [2, 2, 2]);
        assert!(grad.as_slice().iter().all(|&v| v == 8.0));
        let zero = kernel_gradient(&x, &Volume::zeros([2, 2, 2]), [1, 1, 1]).unwrap();
        assert!(zero.as_slice().iter().all(|&v| v == 0.0));
        assert!(kernel_gradient(&x, &g, [2, 2, 2]).is_err());
    }

    #[test]
    fn kernel_gradient_engines_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let cache = FftPlanCache::new();
        let x = rand_vol(&mut rng, [9, 8, 7]);
        let g = rand_vol(&mut rng, [5, 6, 3]);
        let s = [2, 1, 2];
        let a = kernel_gradient(&x, &g, s).unwrap();
        let b = fft_kernel_gradient(&x, &g, s, &cache).unwrap();
        assert_eq!(a.dims(), [3, 3, 3]);
        assert!(a.max_abs_diff(&b) < 1e-10);
    }

    #[test]
    fn dilation_examples() {
        let k = Kernel::new(Volume::<f32>::filled([2, 2, 2], 1.0), [1, 1, 1]).unwrap();
        assert_eq!(dilate_kernel(&k), k.weights);
        let k2 = Kernel::new(k.weights.clone(), [2, 2, 2]).unwrap();
        let d = dilate_kernel(&k2);
        assert_eq!(d.dims(), [3, 3, 3]);
        for i in 0..27 {
            let [a, b, c] = d.coords(i);
            let corner = a % 2 == 0 && b % 2 == 0 && c % 2 == 0;
            assert_eq!(d.as_slice()[i], if corner { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn memoized_paths_match_fresh_paths_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let cache = FftPlanCache::new();
        let store = MemoStore::new();
        let x = rand_vol(&mut rng, [6, 6, 6]).cast::<f32>();
        let k = Kernel::new(rand_vol(&mut rng, [3, 3, 3]).cast::<f32>(), [1, 2, 1]).unwrap();
        let key = |owner, role, b| MemoKey { epoch: 0, owner, role, box_dims: b };
        let memo = || MemoRef {
            store: &store,
            image: key(MemoOwner::Node(0), MemoRole::ForwardImage, [6, 6, 6]),
            kernel: key(MemoOwner::Edge(0), MemoRole::Kernel, [6, 6, 6]),
        };
        let fresh = fft_conv_valid(&x, &k, &cache, None).unwrap();
        let before = cache.counts();
        let first = fft_conv_valid(&x, &k, &cache, Some(memo())).unwrap();
        let second = fft_conv_valid(&x, &k, &cache, Some(memo())).unwrap();
        assert_eq!(fresh, first);
        assert_eq!(first, second);
        let spent = cache.counts().since(&before);
        assert_eq!(spent.get(Pass::Forward, TransformKind::Image), 1);
        assert_eq!(spent.get(Pass::Forward, TransformKind::Kernel), 1);
        assert_eq!(spent.get(Pass::Forward, TransformKind::Inverse), 2);

        let g = rand_vol(&mut rng, [4, 2, 4]).cast::<f32>();
        let bx = [6, 6, 6];
        let full_memo = || MemoRef {
            store: &store,
            image: key(MemoOwner::Node(1), MemoRole::BackwardImage, bx),
            kernel: key(MemoOwner::Edge(0), MemoRole::BackwardKernel, bx),
        };
        let a = fft_conv_full(&g, &k, &cache, None).unwrap();
        let b = fft_conv_full(&g, &k, &cache, Some(full_memo())).unwrap();
        let c = fft_conv_full(&g, &k, &cache, Some(full_memo())).unwrap();
        assert_eq!(a, b);
        assert_eq!(b, c);
        assert_eq!(store.hits(), (4, 4));
        store.evict_owner(MemoOwner::Edge(0));
        assert_eq!(store.len(), 2);
        store.evict_before(1);
        assert!(store.is_empty());
    }
}
