use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

use super::{Scalar, Volume};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TransferKind {
    Logistic,
    Tanh,
    RectifiedLinear,
}

impl TransferKind {
    pub fn value<T: Scalar>(self, x: T) -> T {
        match self {
            TransferKind::Logistic => T::one() / (T::one() + (-x).exp()),
            TransferKind::Tanh => x.tanh(),
            TransferKind::RectifiedLinear => x.max(T::zero()),
        }
    }

    /// Derivative at `x`. The rectifier's derivative at 0 is taken to be 0.
    pub fn derivative<T: Scalar>(self, x: T) -> T {
        match self {
            TransferKind::Logistic => {
                let s = self.value(x);
                s * (T::one() - s)
            }
            TransferKind::Tanh => {
                let t = x.tanh();
                T::one() - t * t
            }
            TransferKind::RectifiedLinear => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }
}

impl FromStr for TransferKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" | "sigmoid" => Ok(TransferKind::Logistic),
            "tanh" => Ok(TransferKind::Tanh),
            "relu" | "rectified_linear" => Ok(TransferKind::RectifiedLinear),
            other => Err(Error::Config(format!("unknown transfer function `{other}`"))),
        }
    }
}

impl fmt::Display for TransferKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransferKind::Logistic => "logistic",
            TransferKind::Tanh => "tanh",
            TransferKind::RectifiedLinear => "relu",
        })
    }
}

/// Elementwise nonlinearity applied after adding a scalar bias.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransferFn<T> {
    pub kind: TransferKind,
    pub bias: T,
}

/// What to do with non-finite input voxels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NonFinite {
    /// Pass them through; divergence is detected on the loss.
    #[default]
    Propagate,
    Reject,
}

pub fn transfer_forward<T: Scalar>(x: &Volume<T>, f: &TransferFn<T>) -> Volume<T> {
    x.map(|v| f.kind.value(v + f.bias))
}

pub fn transfer_forward_checked<T: Scalar>(x: &Volume<T>, f: &TransferFn<T>, policy: NonFinite) -> Result<Volume<T>> {
    if policy == NonFinite::Reject && !x.is_finite() {
        return Err(Error::Domain("non-finite voxel in transfer input".into()));
    }
    Ok(transfer_forward(x, f))
}

/// `g_out * φ'(x_fwd + bias)`, where `x_fwd` is the transfer's forward input.
pub fn transfer_backward<T: Scalar>(g_out: &Volume<T>, x_fwd: &Volume<T>, f: &TransferFn<T>) -> Result<Volume<T>> {
    if g_out.dims() != x_fwd.dims() {
        return Err(Error::ShapeMismatch { op: "transfer_backward", expected: x_fwd.dims(), actual: g_out.dims() });
    }
    let mut out = g_out.zeros_like(g_out.dims());
    for ((o, &g), &x) in out.as_mut_slice().iter_mut().zip(g_out.as_slice()).zip(x_fwd.as_slice()) {
        *o = g * f.kind.derivative(x + f.bias);
    }
    Ok(out)
}

/// Gradient of the loss with respect to a bias: the sum of the backward image.
pub fn bias_gradient<T: Scalar>(g: &Volume<T>) -> T {
    T::of(g.sum_f64())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const KINDS: [TransferKind; 3] = [TransferKind::Logistic, TransferKind::Tanh, TransferKind::RectifiedLinear];

    #[test]
    fn zeros_through_relu_and_logistic() {
        let x = Volume::<f32>::zeros([2, 2, 2]);
        let relu = TransferFn { kind: TransferKind::RectifiedLinear, bias: 0.0 };
        assert!(transfer_forward(&x, &relu).as_slice().iter().all(|&v| v == 0.0));
        let logi = TransferFn { kind: TransferKind::Logistic, bias: 0.0 };
        assert!(transfer_forward(&x, &logi).as_slice().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn tanh_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Volume::<f64>::from_fn([3, 3, 3], |_, _, _| rng.random_range(-2.0..2.0));
        let f = TransferFn { kind: TransferKind::Tanh, bias: 0.1 };
        let y = transfer_forward(&x, &f);
        for i in 0..x.len() {
            assert_eq!(y.as_slice()[i], (x.as_slice()[i] + 0.1).tanh());
        }
    }

    #[test]
    fn relu_backward_masks() {
        let g = Volume::<f32>::from_fn([2, 2, 2], |x, y, z| (x + 2 * y + 4 * z) as f32);
        let pos = Volume::<f32>::filled([2, 2, 2], 1.5);
        let neg = Volume::<f32>::filled([2, 2, 2], -1.5);
        let f = TransferFn { kind: TransferKind::RectifiedLinear, bias: 0.0 };
        assert_eq!(transfer_backward(&g, &pos, &f).unwrap(), g);
        assert!(transfer_backward(&g, &neg, &f).unwrap().as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(TransferKind::RectifiedLinear.derivative(0.0f64), 0.0);
    }

    #[test]
    fn logistic_backward_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Volume::<f64>::from_fn([3, 3, 3], |_, _, _| rng.random_range(-3.0..3.0));
        let g = Volume::<f64>::from_fn([3, 3, 3], |_, _, _| rng.random_range(-1.0..1.0));
        let f = TransferFn { kind: TransferKind::Logistic, bias: 0.2 };
        let b = transfer_backward(&g, &x, &f).unwrap();
        let eps = 1e-6;
        for i in 0..x.len() {
            let xi = x.as_slice()[i] + 0.2;
            let fd = (f.kind.value(xi + eps) - f.kind.value(xi - eps)) / (2.0 * eps);
            assert!((b.as_slice()[i] - fd * g.as_slice()[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn derivative_matches_finite_differences_for_every_kind() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let eps = 1e-6;
        for kind in KINDS {
            for _ in 0..1000 {
                let mut x: f64 = rng.random_range(-4.0..4.0);
                if kind == TransferKind::RectifiedLinear && x.abs() < 2.0 * eps {
                    x = 0.5;
                }
                let fd = (kind.value(x + eps) - kind.value(x - eps)) / (2.0 * eps);
                assert!((kind.derivative(x) - fd).abs() < 1e-6, "{kind} at {x}");
            }
        }
    }

    #[test]
    fn bias_gradient_sums() {
        assert_eq!(bias_gradient(&Volume::<f32>::zeros([4, 4, 4])), 0.0);
        assert_eq!(bias_gradient(&Volume::<f32>::filled([2, 2, 2], 1.0)), 8.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = Volume::<f64>::from_fn([3, 3, 3], |_, _, _| rng.random_range(-1.0..1.0));
        let mut serial = 0.0;
        for &v in g.as_slice() {
            serial += v;
        }
        assert!((bias_gradient(&g) - serial).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_finite_on_request() {
        let mut x = Volume::<f32>::zeros([1, 1, 2]);
        x.as_mut_slice()[1] = f32::NAN;
        let f = TransferFn { kind: TransferKind::Tanh, bias: 0.0 };
        assert!(transfer_forward_checked(&x, &f, NonFinite::Reject).is_err());
        let y = transfer_forward_checked(&x, &f, NonFinite::Propagate).unwrap();
        assert!(y.as_slice()[1].is_nan());
    }
}
