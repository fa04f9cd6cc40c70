use crate::error::{param_err, Result, ZetaError};

pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Central-difference gradient of `f` at `params`.
pub fn finite_diff_grad<F>(mut f: F, params: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0 && h.is_finite()) {
        return param_err(format!("finite-difference step must be positive, got {h}"));
    }
    let mut probe = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe);
        probe[i] = orig - h;
        let down = f(&probe);
        probe[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(ZetaError::Evaluation(format!(
                "non-finite objective while probing coordinate {i}: f(+h)={up}, f(-h)={down}"
            )));
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// `|a − b| / max(|a|, |b|, floor)`.
///
/// A bound of `rtol` on this value is the same as requiring
/// `|a − b| ≤ max(rtol·max(|a|, |b|), rtol·floor)`, so `floor = atol / rtol`
/// gives an absolute tolerance for entries near zero.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square() {
        let g = finite_diff_grad(|p| p[0] * p[0], &[3.0], DEFAULT_FD_STEP).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn constant() {
        let g = finite_diff_grad(|_| 4.0, &[1.0, 2.0, 3.0], DEFAULT_FD_STEP).unwrap();
        assert_eq!(g, vec![0.0; 3]);
    }

    #[test]
    fn bilinear() {
        let g = finite_diff_grad(|p| p[0] * p[1], &[2.0, 5.0], DEFAULT_FD_STEP).unwrap();
        assert!((g[0] - 5.0).abs() < 1e-6 && (g[1] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn non_finite_is_an_error() {
        let r = finite_diff_grad(|p| 1.0 / p[0], &[0.0], 0.0);
        assert!(matches!(r, Err(ZetaError::Parameter(_))));
        let r = finite_diff_grad(|p| if p[0] > 0.0 { f64::NAN } else { 0.0 }, &[0.0], 1e-5);
        assert!(matches!(r, Err(ZetaError::Evaluation(_))));
    }

    #[test]
    fn linear_layer_gradient() {
        // L = sum((x W)^2) with analytic dL/dW = 2 xᵀ (x W)
        use crate::numerics::{gaussian_matrix, matmul, Matrix, Rng};
        let mut rng = Rng::new(4);
        let x = gaussian_matrix(&mut rng, 3, 4, 1.0).unwrap();
        let w = gaussian_matrix(&mut rng, 4, 2, 1.0).unwrap();
        let loss = |p: &[f64]| {
            let w = Matrix::from_vec(4, 2, p.to_vec()).unwrap();
            matmul(&x, &w).unwrap().as_slice().iter().map(|v| v * v).sum::<f64>()
        };
        let numeric = finite_diff_grad(loss, w.as_slice(), DEFAULT_FD_STEP).unwrap();
        let mut y = matmul(&x, &w).unwrap();
        y.scale(2.0);
        let analytic = matmul(&x.transpose(), &y).unwrap();
        for (a, n) in analytic.as_slice().iter().zip(&numeric) {
            assert!(relative_error(*a, *n, 1e-3) < 1e-6, "{a} vs {n}");
        }
    }
}
