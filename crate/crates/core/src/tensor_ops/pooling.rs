use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::mempool::PooledBuf;

use super::{voxels, Dim3, Scalar, Volume};

/// Non-overlapping block max-pooling with block size `p`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PoolSpec {
    pub p: Dim3,
}

/// Sliding-window max-filtering with window `k` and dilation `s`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FilterSpec {
    pub k: Dim3,
    pub s: Dim3,
}

impl FilterSpec {
    pub fn dense(k: Dim3) -> Self {
        FilterSpec { k, s: [1, 1, 1] }
    }

    /// Extent of the dilated window, `s(k-1)+1` per axis.
    pub fn window(&self) -> Dim3 {
        [0, 1, 2].map(|a| self.s[a] * (self.k[a] - 1) + 1)
    }

    pub fn output_dims(&self, input: Dim3) -> Result<Dim3> {
        let w = self.window();
        if (0..3).any(|a| self.k[a] == 0 || self.s[a] == 0 || w[a] > input[a]) {
            return Err(Error::structural("maxfilter", format!("window {w:?} does not fit input {input:?}")));
        }
        Ok([0, 1, 2].map(|a| input[a] - w[a] + 1))
    }
}

impl PoolSpec {
    pub fn output_dims(&self, input: Dim3) -> Result<Dim3> {
        if (0..3).any(|a| self.p[a] == 0 || !input[a].is_multiple_of(self.p[a])) {
            return Err(Error::structural("maxpool", format!("input {input:?} not divisible by block {:?}", self.p)));
        }
        Ok([0, 1, 2].map(|a| input[a] / self.p[a]))
    }
}

/// Flat input index of the maximiser of every output voxel, recorded by the
/// forward pass for its Jacobian. Ties resolve to the lowest flat index.
#[derive(Clone, Debug)]
pub struct ArgmaxRecord {
    pub in_dims: Dim3,
    pub out_dims: Dim3,
    pub source: PooledBuf<usize>,
}

pub fn maxpool_forward<T: Scalar>(x: &Volume<T>, spec: &PoolSpec) -> Result<(Volume<T>, ArgmaxRecord)> {
    let out_dims = spec.output_dims(x.dims())?;
    let mut out = x.zeros_like(out_dims);
    let mut source = PooledBuf::<usize>::zeroed(&x.pool().aux(), voxels(out_dims));
    let [px, py, pz] = spec.p;
    let data = x.as_slice();
    for ox in 0..out_dims[0] {
        for oy in 0..out_dims[1] {
            for oz in 0..out_dims[2] {
                let mut best = x.index(ox * px, oy * py, oz * pz);
                // Visiting in increasing flat order and replacing only on a
                // strictly larger value keeps the lowest index among ties.
                for bx in 0..px {
                    for by in 0..py {
                        let row = x.index(ox * px + bx, oy * py + by, oz * pz);
                        for i in row..row + pz {
                            if data[i] > data[best] {
                                best = i;
                            }
                        }
                    }
                }
                let o = out.index(ox, oy, oz);
                out.as_mut_slice()[o] = data[best];
                source[o] = best;
            }
        }
    }
    Ok((out, ArgmaxRecord { in_dims: x.dims(), out_dims, source }))
}

pub fn maxpool_backward<T: Scalar>(g_out: &Volume<T>, rec: &ArgmaxRecord, spec: &PoolSpec) -> Result<Volume<T>> {
    let expect = [0, 1, 2].map(|a| g_out.dims()[a] * spec.p[a]);
    if expect != rec.in_dims || g_out.dims() != rec.out_dims {
        return Err(Error::ShapeMismatch { op: "maxpool_backward", expected: rec.out_dims, actual: g_out.dims() });
    }
    scatter(g_out, rec)
}

/// Maximum over each dilated window, computed as three separable 1D passes.
pub fn maxfilter_forward<T: Scalar>(x: &Volume<T>, spec: &FilterSpec) -> Result<(Volume<T>, ArgmaxRecord)> {
    let out_dims = spec.output_dims(x.dims())?;
    let aux = x.pool().aux();
    let in_dims = x.dims();

    // z, then y, then x; each pass records the source coordinate along its axis.
    let (a, rz) = filter_axis(x, 2, spec.k[2], spec.s[2], &aux);
    let (b, ry) = filter_axis(&a, 1, spec.k[1], spec.s[1], &aux);
    let (out, rx) = filter_axis(&b, 0, spec.k[0], spec.s[0], &aux);
    debug_assert_eq!(out.dims(), out_dims);

    let [ny, nz] = [in_dims[1], in_dims[2]];
    let [_, my, mz] = out_dims;
    let mut source = PooledBuf::<usize>::zeroed(&aux, voxels(out_dims));
    for ox in 0..out_dims[0] {
        for oy in 0..my {
            for oz in 0..mz {
                let o = (ox * my + oy) * mz + oz;
                let sx = rx[o];
                let sy = ry[(sx * my + oy) * mz + oz];
                let sz = rz[(sx * ny + sy) * mz + oz];
                source[o] = (sx * ny + sy) * nz + sz;
            }
        }
    }
    Ok((out, ArgmaxRecord { in_dims, out_dims, source }))
}

pub fn maxfilter_backward<T: Scalar>(
    g_out: &Volume<T>,
    rec: &ArgmaxRecord,
    spec: &FilterSpec,
    in_dims: Dim3,
) -> Result<Volume<T>> {
    let expect = spec.output_dims(in_dims)?;
    if expect != g_out.dims() || rec.out_dims != expect || rec.in_dims != in_dims {
        return Err(Error::ShapeMismatch { op: "maxfilter_backward", expected: expect, actual: g_out.dims() });
    }
    scatter(g_out, rec)
}

fn scatter<T: Scalar>(g_out: &Volume<T>, rec: &ArgmaxRecord) -> Result<Volume<T>> {
    if rec.source.len() != g_out.len() {
        return Err(Error::structural("argmax", "record length does not match gradient"));
    }
    let mut out = g_out.zeros_like(rec.in_dims);
    let dst = out.as_mut_slice();
    for (&src, &g) in rec.source.iter().zip(g_out.as_slice()) {
        dst[src] += g;
    }
    Ok(out)
}

/// One separable pass along `axis`: returns the filtered volume and, for each
/// of its voxels, the source coordinate along `axis`.
fn filter_axis<T: Scalar>(
    x: &Volume<T>,
    axis: usize,
    k: usize,
    s: usize,
    aux: &std::sync::Arc<crate::mempool::ChunkPool>,
) -> (Volume<T>, PooledBuf<usize>) {
    let dims = x.dims();
    let n = dims[axis];
    let m = n - s * (k - 1);
    let mut out_dims = dims;
    out_dims[axis] = m;
    let mut out = x.zeros_like(out_dims);
    let mut rec = PooledBuf::<usize>::zeroed(aux, voxels(out_dims));

    let stride: usize = dims[axis + 1..].iter().product();
    let outer: usize = dims[..axis].iter().product();
    let src = x.as_slice();
    let mut line = vec![T::zero(); n];
    let mut line_out = vec![T::zero(); m];
    let mut line_arg = vec![0usize; m];
    let mut deque = VecDeque::with_capacity(k);

    for o in 0..outer {
        for inner in 0..stride {
            let base_in = o * n * stride + inner;
            let base_out = o * m * stride + inner;
            for (i, v) in line.iter_mut().enumerate() {
                *v = src[base_in + i * stride];
            }
            sliding_max_into(&line, k, s, &mut line_out, &mut line_arg, &mut deque);
            let dst = out.as_mut_slice();
            for j in 0..m {
                dst[base_out + j * stride] = line_out[j];
                rec[base_out + j * stride] = line_arg[j];
            }
        }
    }
    (out, rec)
}

/// Dilated 1D sliding-window maximum using a monotonic deque per residue
/// class. Output `o` is the maximum of `line[o], line[o+s], ..., line[o+s(k-1)]`
/// and `arg[o]` its lowest-index position.
pub fn sliding_max<T: Scalar>(line: &[T], k: usize, s: usize) -> (Vec<T>, Vec<usize>) {
    assert!(k >= 1 && s >= 1 && s * (k - 1) < line.len(), "window does not fit");
    let m = line.len() - s * (k - 1);
    let mut out = vec![T::zero(); m];
    let mut arg = vec![0; m];
    sliding_max_into(line, k, s, &mut out, &mut arg, &mut VecDeque::new());
    (out, arg)
}

fn sliding_max_into<T: Scalar>(
    line: &[T],
    k: usize,
    s: usize,
    out: &mut [T],
    arg: &mut [usize],
    deque: &mut VecDeque<usize>,
) {
    let n = line.len();
    let m = out.len();
    for r in 0..s.min(n) {
        deque.clear();
        let mut j = 0;
        let mut i = r;
        while i < n {
            // Equal values stay queued behind earlier ones: the lowest index wins ties.
            while let Some(&back) = deque.back() {
                if line[back] < line[i] {
                    deque.pop_back();
                } else {
                    break;
                }
            }
            deque.push_back(i);
            if j + 1 >= k {
                let start = i - s * (k - 1);
                while let Some(&front) = deque.front() {
                    if front < start {
                        deque.pop_front();
                    } else {
                        break;
                    }
                }
                if start < m {
                    let front = *deque.front().expect("non-empty window");
                    out[start] = line[front];
                    arg[start] = front;
                }
            }
            j += 1;
            i += s;
        }
    }
}

/// `out[i,j,l] = x[nx-1-i, ny-1-j, nz-1-l]`
pub fn reflect<T: Scalar>(x: &Volume<T>) -> Volume<T> {
    let mut out = x.zeros_like(x.dims());
    let n = x.len();
    let src = x.as_slice();
    // Reflecting all three axes of an x-major array reverses the flat order.
    for (i, o) in out.as_mut_slice().iter_mut().enumerate() {
        *o = src[n - 1 - i];
    }
    out
}
