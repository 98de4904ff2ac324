use crate::error::{Error, Result};

use super::tensor::Tensor;

/// Central-difference gradient of a scalar function, one coordinate at a time.
pub fn finite_difference_grad<F>(f: F, x: &Tensor, h: f64) -> Result<Vec<f64>>
where
    F: Fn(&Tensor) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::Input(format!("step h must be > 0, got {h}")));
    }
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numeric(format!(
                "function is not finite around coordinate {i}"
            )));
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// Largest element-wise relative error between two gradients, with an
/// absolute floor so near-zero entries do not dominate.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let x = Tensor::vector(vec![1.0, 2.0]).unwrap();
        let g = finite_difference_grad(|t| t.data().iter().map(|v| v * v).sum(), &x, 1e-4).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-6 && (g[1] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn constant_function() {
        let x = Tensor::vector(vec![0.5, -3.0, 9.0]).unwrap();
        let g = finite_difference_grad(|_| 42.0, &x, 1e-3).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn product_rule() {
        let x = Tensor::vector(vec![3.0, 5.0]).unwrap();
        let g = finite_difference_grad(|t| t.data()[0] * t.data()[1], &x, 1e-4).unwrap();
        assert!((g[0] - 5.0).abs() < 1e-6 && (g[1] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn non_finite_output_is_numeric_error() {
        let x = Tensor::vector(vec![0.0]).unwrap();
        let r = finite_difference_grad(|t| 1.0 / (t.data()[0] - 1e-4), &x, 1e-4);
        assert!(matches!(r, Err(Error::Numeric(_))));
        assert!(finite_difference_grad(|_| 0.0, &x, 0.0).is_err());
    }
}
