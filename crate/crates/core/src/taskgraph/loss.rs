use crate::error::{Error, Result};
use crate::tensor_ops::{Scalar, Volume};

/// `L = ½ Σ (a - d)²` and its gradient `a - d`.
pub fn loss_and_gradient<T: Scalar>(actual: &Volume<T>, desired: &Volume<T>) -> Result<(f64, Volume<T>)> {
    if actual.dims() != desired.dims() {
        return Err(Error::ShapeMismatch { op: "loss", expected: actual.dims(), actual: desired.dims() });
    }
    let mut grad = actual.clone();
    grad.sub_scaled(T::one(), desired);
    let loss = 0.5 * grad.as_slice().iter().map(|&v| v.f64() * v.f64()).sum::<f64>();
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_volumes_have_zero_loss() {
        let a = Volume::<f32>::filled([2, 3, 1], 0.7);
        let (l, g) = loss_and_gradient(&a, &a).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_difference() {
        let a = Volume::<f64>::filled([2, 2, 2], 2.0);
        let d = Volume::<f64>::filled([2, 2, 2], 1.0);
        let (l, g) = loss_and_gradient(&a, &d).unwrap();
        assert_eq!(l, 4.0);
        assert!(g.as_slice().iter().all(|&v| v == 1.0));
        assert!(loss_and_gradient(&a, &Volume::zeros([1, 2, 2])).is_err());
    }
}
