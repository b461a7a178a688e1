//! Central finite differences, the independent gradient oracle every
//! hand-derived backward pass in this crate is checked against.

use crate::error::{Error, Result};
use crate::grid::Grid2D;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Central-difference gradient of a scalar function of a grid.
pub fn finite_diff_grad<F>(mut f: F, x: &Grid2D, h: f64) -> Result<Grid2D>
where
    F: FnMut(&Grid2D) -> f64,
{
    if h <= 0.0 {
        return Err(Error::InvalidArg("finite_diff_grad requires h > 0".into()));
    }
    let mut probe = x.clone();
    let mut grad = Grid2D::zeros(x.rows(), x.cols());
    for k in 0..x.len() {
        let orig = probe.data()[k];
        probe.data_mut()[k] = orig + h;
        let plus = f(&probe);
        probe.data_mut()[k] = orig - h;
        let minus = f(&probe);
        probe.data_mut()[k] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!(
                "function evaluation while probing element {k}"
            )));
        }
        grad.data_mut()[k] = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}

/// Same oracle over a flat slice, for parameter-space checks.
pub fn finite_diff_vec<F>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if h <= 0.0 {
        return Err(Error::InvalidArg("finite_diff_vec requires h > 0".into()));
    }
    let mut probe = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for k in 0..x.len() {
        let orig = probe[k];
        probe[k] = orig + h;
        let plus = f(&probe);
        probe[k] = orig - h;
        let minus = f(&probe);
        probe[k] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!(
                "function evaluation while probing element {k}"
            )));
        }
        grad[k] = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let x = Grid2D::from_vec(1, 2, vec![1.0, 2.0]).unwrap();
        let g = finite_diff_grad(|g| g.data().iter().map(|v| v * v).sum(), &x, 1e-5).unwrap();
        assert!((g.get(0, 0) - 2.0).abs() < 1e-8);
        assert!((g.get(0, 1) - 4.0).abs() < 1e-8);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let x = Grid2D::filled(3, 3, 0.7);
        let g = finite_diff_grad(|_| 4.25, &x, 1e-5).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_function_recovers_weights() {
        let w = [0.3, -1.2, 2.5, 0.0];
        let x = Grid2D::from_vec(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let g = finite_diff_grad(
            |g| g.data().iter().zip(w.iter()).map(|(a, b)| a * b).sum(),
            &x,
            1e-5,
        )
        .unwrap();
        for (got, want) in g.data().iter().zip(w.iter()) {
            assert!((got - want).abs() < 1e-8);
        }
    }

    #[test]
    fn rejects_bad_step_and_nan() {
        let x = Grid2D::zeros(1, 1);
        assert!(finite_diff_grad(|_| 0.0, &x, 0.0).is_err());
        assert!(finite_diff_grad(|_| f64::NAN, &x, 1e-5).is_err());
    }
}
