//! Central finite-difference gradient checking.

use ndarray::ArrayD;

/// Central finite differences of a scalar function at `x0`.
/// Step per coordinate is `h * max(1, |x_i|)`.
pub fn finite_diff(x0: &ArrayD<f64>, h: f64, mut f: impl FnMut(&ArrayD<f64>) -> f64) -> ArrayD<f64> {
    let mut grad = ArrayD::zeros(x0.raw_dim());
    let mut x = x0.clone();
    let n = x0.len();
    for i in 0..n {
        let orig = x.as_slice_mut().unwrap()[i];
        let step = h * orig.abs().max(1.0);
        x.as_slice_mut().unwrap()[i] = orig + step;
        let fp = f(&x);
        x.as_slice_mut().unwrap()[i] = orig - step;
        let fm = f(&x);
        x.as_slice_mut().unwrap()[i] = orig;
        grad.as_slice_mut().unwrap()[i] = (fp - fm) / (2.0 * step);
    }
    grad
}

/// Worst-case relative error between analytic and numeric gradients.
/// Components where both are below `1e-7` in magnitude are ignored.
pub fn max_rel_error(analytic: &ArrayD<f64>, numeric: &ArrayD<f64>) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    let mut worst = 0.0f64;
    for (&a, &n) in analytic.iter().zip(numeric.iter()) {
        let scale = a.abs().max(n.abs());
        if scale < 1e-7 {
            continue;
        }
        worst = worst.max((a - n).abs() / scale);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, IxDyn};

    #[test]
    fn finite_diff_of_quadratic() {
        let x0 = arr1(&[1.0, -2.0, 3.0]).into_dyn();
        let g = finite_diff(&x0, 1e-6, |x| x.iter().map(|v| v * v).sum());
        let expect = arr1(&[2.0, -4.0, 6.0]).into_dyn();
        assert!(max_rel_error(&expect, &g) < 1e-9);
    }

    #[test]
    fn rel_error_ignores_tiny_components() {
        let a = arr1(&[1e-9, 1.0]).into_dyn();
        let b = arr1(&[-1e-9, 1.0]).into_dyn();
        assert_eq!(max_rel_error(&a, &b), 0.0);
    }

    #[test]
    fn finite_diff_works_on_0d() {
        let x0 = ndarray::ArrayD::from_elem(IxDyn(&[]), 2.0);
        let g = finite_diff(&x0, 1e-6, |x| {
            let v = *x.iter().next().unwrap();
            v * v * v
        });
        assert!((g.iter().next().unwrap() - 12.0).abs() < 1e-5);
    }
}
