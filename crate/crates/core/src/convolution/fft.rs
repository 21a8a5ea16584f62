use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::mempool::{ChunkPool, PooledBuf};
use crate::scheduler::Accumulate;
use crate::tensor_ops::{voxels, Dim3, Scalar, Volume};

/// Which training pass a transform belongs to, for instrumentation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Pass {
    Forward = 0,
    Backward = 1,
    Update = 2,
    Other = 3,
}

/// What a transform was applied to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TransformKind {
    /// Forward image at a node.
    Image = 0,
    /// Backward image at a node.
    Gradient = 1,
    Kernel = 2,
    Inverse = 3,
}

/// Transform counts indexed by `[pass][kind]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TransformCounts(pub [[u64; 4]; 4]);

impl TransformCounts {
    pub fn get(&self, pass: Pass, kind: TransformKind) -> u64 {
        self.0[pass as usize][kind as usize]
    }

    pub fn pass_total(&self, pass: Pass) -> u64 {
        self.0[pass as usize].iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.0.iter().flatten().sum()
    }

    pub fn since(&self, earlier: &TransformCounts) -> TransformCounts {
        let mut out = *self;
        for p in 0..4 {
            for k in 0..4 {
                out.0[p][k] -= earlier.0[p][k];
            }
        }
        out
    }
}

/// Frequency-domain image over a padded box.
pub struct Spectrum<T: Scalar> {
    dims: Dim3,
    data: PooledBuf<Complex<T>>,
}

impl<T: Scalar> Spectrum<T> {
    pub fn dims(&self) -> Dim3 {
        self.dims
    }

    pub fn as_slice(&self) -> &[Complex<T>] {
        &self.data
    }

    fn zeros(pool: &Arc<ChunkPool>, dims: Dim3) -> Self {
        Spectrum { dims, data: PooledBuf::zeroed(pool, voxels(dims)) }
    }

    /// `self * conj(other)`: spatial cross-correlation.
    pub fn mul_conj(&self, other: &Spectrum<T>) -> Spectrum<T> {
        assert_eq!(self.dims, other.dims, "spectrum box mismatch");
        let mut out = Spectrum::zeros(self.data.pool(), self.dims);
        for ((o, a), b) in out.data.iter_mut().zip(self.data.iter()).zip(other.data.iter()) {
            *o = a * b.conj();
        }
        out
    }

    /// `self * other`: spatial convolution.
    pub fn mul(&self, other: &Spectrum<T>) -> Spectrum<T> {
        assert_eq!(self.dims, other.dims, "spectrum box mismatch");
        let mut out = Spectrum::zeros(self.data.pool(), self.dims);
        for ((o, a), b) in out.data.iter_mut().zip(self.data.iter()).zip(other.data.iter()) {
            *o = a * b;
        }
        out
    }
}

impl<T: Scalar> Accumulate for Spectrum<T> {
    fn accumulate(&mut self, other: &Self) {
        assert_eq!(self.dims, other.dims, "spectrum box mismatch");
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a = *a + *b;
        }
    }
}

type PlanMap<T> = HashMap<(usize, bool), Arc<dyn Fft<T>>>;

/// Shared 1D plans plus 3D transform drivers and transform counters.
///
/// Plan lookup is guarded by a read-write lock; the planner itself sits
/// behind a mutex and is only touched on a miss.
pub struct FftPlanCache<T: Scalar> {
    plans: RwLock<PlanMap<T>>,
    planner: Mutex<FftPlanner<T>>,
    counts: [[AtomicU64; 4]; 4],
}

impl<T: Scalar> Default for FftPlanCache<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> FftPlanCache<T> {
    pub fn new() -> Self {
        FftPlanCache {
            plans: RwLock::new(HashMap::new()),
            planner: Mutex::new(FftPlanner::new()),
            counts: Default::default(),
        }
    }

    pub fn counts(&self) -> TransformCounts {
        let mut out = TransformCounts::default();
        for p in 0..4 {
            for k in 0..4 {
                out.0[p][k] = self.counts[p][k].load(Ordering::Relaxed);
            }
        }
        out
    }

    pub fn reset_counts(&self) {
        for row in &self.counts {
            for c in row {
                c.store(0, Ordering::Relaxed);
            }
        }
    }

    pub fn plan(&self, len: usize, inverse: bool) -> Arc<dyn Fft<T>> {
        if let Some(p) = self.plans.read().expect("plan lock").get(&(len, inverse)) {
            return Arc::clone(p);
        }
        let plan = {
            let mut planner = self.planner.lock().expect("planner lock");
            if inverse {
                planner.plan_fft_inverse(len)
            } else {
                planner.plan_fft_forward(len)
            }
        };
        self.plans.write().expect("plan lock").entry((len, inverse)).or_insert(plan).clone()
    }

    fn count(&self, pass: Pass, kind: TransformKind) {
        self.counts[pass as usize][kind as usize].fetch_add(1, Ordering::Relaxed);
    }

    /// Zero-pads `v` at the origin of `box_dims` and transforms it.
    pub fn forward(&self, v: &Volume<T>, box_dims: Dim3, pass: Pass, kind: TransformKind) -> Spectrum<T> {
        let vd = v.dims();
        assert!((0..3).all(|a| vd[a] <= box_dims[a]), "volume {vd:?} larger than transform box {box_dims:?}");
        let mut spec = Spectrum::zeros(v.pool(), box_dims);
        let src = v.as_slice();
        for x in 0..vd[0] {
            for y in 0..vd[1] {
                let s = v.index(x, y, 0);
                let d = (x * box_dims[1] + y) * box_dims[2];
                for z in 0..vd[2] {
                    spec.data[d + z] = Complex::new(src[s + z], T::zero());
                }
            }
        }
        self.transform(&mut spec.data, box_dims, false, v.pool());
        self.count(pass, kind);
        spec
    }

    /// Inverse transform, keeping the real part of the `out_dims` box at the origin.
    pub fn inverse(&self, spec: &Spectrum<T>, out_dims: Dim3, pass: Pass) -> Volume<T> {
        let bd = spec.dims;
        assert!((0..3).all(|a| out_dims[a] <= bd[a]), "crop larger than transform box");
        let mut buf = spec.data.clone();
        self.transform(&mut buf, bd, true, spec.data.pool());
        self.count(pass, TransformKind::Inverse);
        let scale = T::one() / T::of(voxels(bd) as f64);
        let mut out = Volume::zeros_in(spec.data.pool(), out_dims);
        let dst = out.as_mut_slice();
        for x in 0..out_dims[0] {
            for y in 0..out_dims[1] {
                let s = (x * bd[1] + y) * bd[2];
                let d = (x * out_dims[1] + y) * out_dims[2];
                for z in 0..out_dims[2] {
                    dst[d + z] = buf[s + z].re * scale;
                }
            }
        }
        out
    }

    /// Separable 3D transform in place over an x-major buffer.
    pub fn transform(&self, data: &mut [Complex<T>], dims: Dim3, inverse: bool, pool: &Arc<ChunkPool>) {
        let [nx, ny, nz] = dims;
        let plans = [nz, ny, nx].map(|n| (n > 1).then(|| self.plan(n, inverse)));
        let need = plans.iter().flatten().map(|p| p.get_inplace_scratch_len()).max().unwrap_or(0);
        let mut scratch = (need > 0).then(|| PooledBuf::<Complex<T>>::zeroed(pool, need));
        let scratch: &mut [Complex<T>] = scratch.as_deref_mut().unwrap_or(&mut []);
        let [pz, py, px] = plans;

        if let Some(plan) = pz {
            plan.process_with_scratch(data, scratch);
        }
        if let Some(plan) = py {
            let mut tmp = PooledBuf::<Complex<T>>::zeroed(pool, ny * nz);
            for plane in data.chunks_exact_mut(ny * nz) {
                transpose(plane, &mut tmp, ny, nz);
                plan.process_with_scratch(&mut tmp, scratch);
                transpose(&tmp, plane, nz, ny);
            }
        }
        if let Some(plan) = px {
            let mut tmp = PooledBuf::<Complex<T>>::zeroed(pool, data.len());
            transpose(data, &mut tmp, nx, ny * nz);
            plan.process_with_scratch(&mut tmp, scratch);
            transpose(&tmp, data, ny * nz, nx);
        }
    }
}

/// `dst[c * rows + r] = src[r * cols + c]`
fn transpose<T: Copy>(src: &[T], dst: &mut [T], rows: usize, cols: usize) {
    const BLOCK: usize = 16;
    for rb in (0..rows).step_by(BLOCK) {
        for cb in (0..cols).step_by(BLOCK) {
            for r in rb..(rb + BLOCK).min(rows) {
                for c in cb..(cb + BLOCK).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transform_round_trips() {
        let cache = FftPlanCache::<f64>::new();
        let v = Volume::<f64>::from_fn([3, 4, 5], |x, y, z| (x * 7 + y * 3 + z) as f64 * 0.1 - 1.0);
        let s = cache.forward(&v, [4, 6, 5], Pass::Other, TransformKind::Image);
        let back = cache.inverse(&s, [3, 4, 5], Pass::Other);
        assert!(back.max_abs_diff(&v) < 1e-12);
        let c = cache.counts();
        assert_eq!(c.get(Pass::Other, TransformKind::Image), 1);
        assert_eq!(c.get(Pass::Other, TransformKind::Inverse), 1);
    }

    #[test]
    fn plan_reuse_is_bitwise_deterministic() {
        let cache = FftPlanCache::<f32>::new();
        let v = Volume::<f32>::from_fn([5, 6, 7], |x, y, z| ((x * 31 + y * 17 + z * 7) % 11) as f32);
        let a = cache.forward(&v, [5, 6, 7], Pass::Other, TransformKind::Image);
        let b = cache.forward(&v, [5, 6, 7], Pass::Other, TransformKind::Image);
        assert_eq!(a.as_slice(), b.as_slice());
        assert!(Arc::ptr_eq(&cache.plan(6, false), &cache.plan(6, false)));
    }

    #[test]
    fn transpose_is_involution() {
        let src: Vec<u32> = (0..35).collect();
        let mut t = vec![0; 35];
        let mut back = vec![0; 35];
        transpose(&src, &mut t, 5, 7);
        assert_eq!(t[1], 7);
        transpose(&t, &mut back, 7, 5);
        assert_eq!(back, src);
    }
}
