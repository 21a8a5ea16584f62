use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};
use std::sync::{Arc, OnceLock};

use num_traits::Float;
use rustfft::FftNum;

use crate::error::{Error, Result};
use crate::mempool::{ChunkPool, Pod, PooledBuf};

/// Extent along (x, y, z).
pub type Dim3 = [usize; 3];

pub fn voxels(d: Dim3) -> usize {
    d[0] * d[1] * d[2]
}

/// Floating point element type of volumes.
pub trait Scalar:
    Float + FftNum + Pod + Default + fmt::Debug + fmt::Display + Sum + AddAssign + SubAssign + MulAssign
{
    fn of(v: f64) -> Self;
    fn f64(self) -> f64;
}

impl Scalar for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn f64(self) -> f64 {
        self
    }
}

/// Process-wide pool used when no pool is given explicitly.
pub fn default_pool() -> &'static Arc<ChunkPool> {
    static POOL: OnceLock<Arc<ChunkPool>> = OnceLock::new();
    POOL.get_or_init(ChunkPool::for_volumes)
}

/// Dense 3D image.
///
/// Storage is x-major: `x` is the slowest axis and `z` the contiguous one, so
/// voxel `(x, y, z)` lives at `(x * ny + y) * nz + z`. Every routine in the
/// crate uses this layout.
pub struct Volume<T: Scalar> {
    dims: Dim3,
    data: PooledBuf<T>,
}

impl<T: Scalar> Volume<T> {
    pub fn zeros(dims: Dim3) -> Self {
        Self::zeros_in(default_pool(), dims)
    }

    pub fn zeros_in(pool: &Arc<ChunkPool>, dims: Dim3) -> Self {
        assert!(dims.iter().all(|&d| d >= 1), "volume dimensions must be positive: {dims:?}");
        Volume { dims, data: PooledBuf::zeroed(pool, voxels(dims)) }
    }

    pub fn filled(dims: Dim3, value: T) -> Self {
        let mut v = Self::zeros(dims);
        v.data.fill(value);
        v
    }

    pub fn from_vec(dims: Dim3, data: Vec<T>) -> Result<Self> {
        Self::from_slice_in(default_pool(), dims, &data)
    }

    pub fn from_slice_in(pool: &Arc<ChunkPool>, dims: Dim3, data: &[T]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::structural("volume", format!("zero dimension in {dims:?}")));
        }
        if data.len() != voxels(dims) {
            return Err(Error::structural("volume", format!("{} values for dims {dims:?}", data.len())));
        }
        Ok(Volume { dims, data: PooledBuf::from_slice(pool, data) })
    }

    pub fn from_fn(dims: Dim3, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut v = Self::zeros(dims);
        let [nx, ny, nz] = dims;
        let mut i = 0;
        for x in 0..nx {
            for y in 0..ny {
                for z in 0..nz {
                    v.data[i] = f(x, y, z);
                    i += 1;
                }
            }
        }
        v
    }

    /// A zeroed volume drawn from the same pool as `self`.
    pub fn zeros_like(&self, dims: Dim3) -> Self {
        Self::zeros_in(self.data.pool(), dims)
    }

    pub fn pool(&self) -> &Arc<ChunkPool> {
        self.data.pool()
    }

    pub fn dims(&self) -> Dim3 {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.dims[1] + y) * self.dims[2] + z
    }

    /// Inverse of [`Volume::index`].
    pub fn coords(&self, i: usize) -> Dim3 {
        let z = i % self.dims[2];
        let rest = i / self.dims[2];
        [rest / self.dims[1], rest % self.dims[1], z]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.data[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: T) {
        let i = self.index(x, y, z);
        self.data[i] = v;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        let mut out = self.zeros_like(self.dims);
        for (o, &v) in out.data.iter_mut().zip(self.data.iter()) {
            *o = f(v);
        }
        out
    }

    pub fn add_assign(&mut self, other: &Volume<T>) {
        assert_eq!(self.dims, other.dims, "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
    }

    /// `self -= alpha * other`
    pub fn sub_scaled(&mut self, alpha: T, other: &Volume<T>) {
        assert_eq!(self.dims, other.dims, "sub_scaled shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a -= alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: T) {
        for a in self.data.iter_mut() {
            *a *= alpha;
        }
    }

    /// Sum of all voxels, accumulated in f64.
    pub fn sum_f64(&self) -> f64 {
        self.data.iter().map(|v| v.f64()).sum()
    }

    /// Inner product accumulated in f64.
    pub fn dot(&self, other: &Volume<T>) -> f64 {
        assert_eq!(self.dims, other.dims, "dot shape mismatch");
        self.data.iter().zip(other.data.iter()).map(|(a, b)| a.f64() * b.f64()).sum()
    }

    pub fn max_abs_diff(&self, other: &Volume<T>) -> f64 {
        assert_eq!(self.dims, other.dims, "max_abs_diff shape mismatch");
        self.data.iter().zip(other.data.iter()).map(|(a, b)| (a.f64() - b.f64()).abs()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Volume<U> {
        let mut out = Volume::<U>::zeros_in(self.pool(), self.dims);
        for (o, &v) in out.data.iter_mut().zip(self.data.iter()) {
            *o = U::of(v.f64());
        }
        out
    }

    /// Copy of the sub-box starting at `origin` with extent `dims`.
    pub fn crop(&self, origin: Dim3, dims: Dim3) -> Result<Self> {
        if (0..3).any(|a| origin[a] + dims[a] > self.dims[a]) {
            return Err(Error::structural("crop", format!("box {origin:?}+{dims:?} outside {:?}", self.dims)));
        }
        let mut out = self.zeros_like(dims);
        for x in 0..dims[0] {
            for y in 0..dims[1] {
                let src = self.index(origin[0] + x, origin[1] + y, origin[2]);
                let dst = out.index(x, y, 0);
                out.data[dst..dst + dims[2]].copy_from_slice(&self.data[src..src + dims[2]]);
            }
        }
        Ok(out)
    }
}

impl<T: Scalar> Clone for Volume<T> {
    fn clone(&self) -> Self {
        Volume { dims: self.dims, data: self.data.clone() }
    }
}

impl<T: Scalar> PartialEq for Volume<T> {
    fn eq(&self, other: &Self) -> bool {
        self.dims == other.dims && self.as_slice() == other.as_slice()
    }
}

impl<T: Scalar> fmt::Debug for Volume<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Volume").field("dims", &self.dims).field("data", &self.as_slice()).finish()
    }
}
