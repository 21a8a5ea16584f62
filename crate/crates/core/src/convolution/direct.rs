use crate::error::{Error, Result};
use crate::tensor_ops::{Dim3, Scalar, Volume};

use super::Kernel;

/// Valid sparse cross-correlation: `out[o] = sum_w x[o + s*w] * k[w]`, with
/// output extent `n - k_e + 1` per axis.
pub fn conv_valid_direct<T: Scalar>(x: &Volume<T>, k: &Kernel<T>) -> Result<Volume<T>> {
    let out_dims = k.valid_output(x.dims())?;
    let mut out = x.zeros_like(out_dims);
    let kd = k.weights.dims();
    let s = k.sparsity;
    let [mx, my, mz] = out_dims;
    let xs = x.as_slice();
    let kw = k.weights.as_slice();
    let dst = out.as_mut_slice();
    for ox in 0..mx {
        for oy in 0..my {
            let orow = (ox * my + oy) * mz;
            let o = &mut dst[orow..orow + mz];
            for wx in 0..kd[0] {
                for wy in 0..kd[1] {
                    for wz in 0..kd[2] {
                        let kv = kw[(wx * kd[1] + wy) * kd[2] + wz];
                        let irow = x.index(ox + s[0] * wx, oy + s[1] * wy, s[2] * wz);
                        let src = &xs[irow..irow + mz];
                        for (a, &b) in o.iter_mut().zip(src) {
                            *a += kv * b;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Full sparse cross-correlation: the input is zero-padded by `k_e - 1` on
/// every side and correlated with `k`, giving extent `n + k_e - 1`.
///
/// `conv_full_direct(g, &k.reflected())` is the transpose of
/// `conv_valid_direct(., &k)`, which is how the backward pass uses it.
pub fn conv_full_direct<T: Scalar>(g: &Volume<T>, k: &Kernel<T>) -> Result<Volume<T>> {
    let ke = k.effective();
    let gd = g.dims();
    let out_dims = [0, 1, 2].map(|a| gd[a] + ke[a] - 1);
    let mut out = g.zeros_like(out_dims);
    let kd = k.weights.dims();
    let s = k.sparsity;
    let pad = [0, 1, 2].map(|a| ke[a] - 1);
    let gs = g.as_slice();
    let kw = k.weights.as_slice();
    let (ny, nz) = (out_dims[1], out_dims[2]);
    let dst = out.as_mut_slice();
    // out[i] = sum_w g[i - pad + s*w] k[w]; scatter each g row into every
    // output row it reaches.
    for gx in 0..gd[0] {
        for gy in 0..gd[1] {
            let grow = g.index(gx, gy, 0);
            let src = &gs[grow..grow + gd[2]];
            for wx in 0..kd[0] {
                for wy in 0..kd[1] {
                    for wz in 0..kd[2] {
                        let kv = kw[(wx * kd[1] + wy) * kd[2] + wz];
                        let ix = gx + pad[0] - s[0] * wx;
                        let iy = gy + pad[1] - s[1] * wy;
                        let iz = pad[2] - s[2] * wz;
                        let orow = (ix * ny + iy) * nz + iz;
                        for (a, &b) in dst[orow..orow + gd[2]].iter_mut().zip(src) {
                            *a += kv * b;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Extent of a kernel gradient for a forward input of extent `n` and a
/// backward image of extent `m`: `(n - m)/s + 1` per axis.
pub fn kernel_gradient_dims(n: Dim3, m: Dim3, s: Dim3) -> Result<Dim3> {
    let mut out = [0; 3];
    for a in 0..3 {
        if m[a] > n[a] || s[a] == 0 || !(n[a] - m[a]).is_multiple_of(s[a]) {
            return Err(Error::structural(
                "kernel_gradient",
                format!("inconsistent extents: input {n:?}, gradient {m:?}, sparsity {s:?}"),
            ));
        }
        out[a] = (n[a] - m[a]) / s[a] + 1;
    }
    Ok(out)
}

/// Gradient of the loss with respect to the kernel of a valid sparse
/// correlation: `G[w] = sum_o x[o + s*w] * g[o]`.
pub fn kernel_gradient<T: Scalar>(x_fwd: &Volume<T>, g_bwd: &Volume<T>, s: Dim3) -> Result<Volume<T>> {
    let kd = kernel_gradient_dims(x_fwd.dims(), g_bwd.dims(), s)?;
    let mut out = x_fwd.zeros_like(kd);
    let [mx, my, mz] = g_bwd.dims();
    let xs = x_fwd.as_slice();
    let gs = g_bwd.as_slice();
    for wx in 0..kd[0] {
        for wy in 0..kd[1] {
            for wz in 0..kd[2] {
                let mut acc = T::zero();
                for ox in 0..mx {
                    for oy in 0..my {
                        let grow = (ox * my + oy) * mz;
                        let xrow = x_fwd.index(ox + s[0] * wx, oy + s[1] * wy, s[2] * wz);
                        for (&a, &b) in gs[grow..grow + mz].iter().zip(&xs[xrow..xrow + mz]) {
                            acc += a * b;
                        }
                    }
                }
                out.set(wx, wy, wz, acc);
            }
        }
    }
    Ok(out)
}

/// Dense kernel of extent `k_e` holding the original weights at stride-`s`
/// positions and zeros elsewhere.
pub fn dilate_kernel<T: Scalar>(k: &Kernel<T>) -> Volume<T> {
    let ke = k.effective();
    let mut out = k.weights.zeros_like(ke);
    let kd = k.weights.dims();
    let s = k.sparsity;
    for wx in 0..kd[0] {
        for wy in 0..kd[1] {
            for wz in 0..kd[2] {
                out.set(s[0] * wx, s[1] * wy, s[2] * wz, k.weights.get(wx, wy, wz));
            }
        }
    }
    out
}
