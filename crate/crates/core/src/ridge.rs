//! Kernel ridge regression with an unpenalized intercept, and generalized
//! cross-validation over a fixed ridge grid.

use crate::numerics::{spd_factor, NumericsError};
use nalgebra::{DMatrix, DVector};

/// Ridge grid scanned by GCV selection, smallest first.
pub const GCV_GRID: [f64; 6] = [1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0];

/// Fitted kernel ridge model f(x) = sum_j alpha_j k(x, x_j) + intercept.
#[derive(Clone, Debug)]
pub struct KrrFit {
    pub coefficients: DVector<f64>,
    pub intercept: f64,
    pub kappa: f64,
}

impl KrrFit {
    /// Predictions from a cross-Gram whose columns index the training units.
    pub fn predict(&self, cross: &DMatrix<f64>) -> DVector<f64> {
        let mut out = cross * &self.coefficients;
        out.add_scalar_mut(self.intercept);
        out
    }
}

/// GCV score profile over the grid for a centered response: the smoother is
/// H(kappa) = K (K + kappa I)^{-1}, so with K = U diag(l) U^T and z = U^T
/// (y - mean(y)) the score is (1/m)||(I-H)y_c||^2 / (1 - tr(H)/m)^2.
/// Returns the kappa from `grid` with the smallest score; ties keep the
/// earliest entry.
pub fn gcv_select(k: &DMatrix<f64>, y: &DVector<f64>, grid: &[f64]) -> f64 {
    assert!(!grid.is_empty(), "the ridge grid must be non-empty");
    let m = k.nrows();
    let eig = k.clone().symmetric_eigen();
    let y_mean = y.mean();
    let yc = y.map(|v| v - y_mean);
    let z = eig.eigenvectors.transpose() * yc;
    let mut best = (grid[0], f64::INFINITY);
    for &kappa in grid {
        let mut rss = 0.0;
        let mut df = 0.0;
        for i in 0..m {
            let lam = eig.eigenvalues[i].max(0.0);
            let shrink = kappa / (lam + kappa);
            rss += z[i] * z[i] * shrink * shrink;
            df += lam / (lam + kappa);
        }
        let denom = 1.0 - df / m as f64;
        if denom <= 1e-12 {
            continue;
        }
        let score = (rss / m as f64) / (denom * denom);
        if score < best.1 {
            best = (kappa, score);
        }
    }
    best.0
}

/// Kernel ridge with an unpenalized intercept:
/// beta0 = 1^T (K + kappa I)^{-1} y / 1^T (K + kappa I)^{-1} 1 and
/// alpha = (K + kappa I)^{-1} (y - beta0 1). The residuals y - K alpha -
/// beta0 equal kappa * alpha and sum to zero because 1^T alpha = 0.
pub fn krr_intercepted(
    k: &DMatrix<f64>,
    y: &DVector<f64>,
    kappa: f64,
) -> Result<KrrFit, NumericsError> {
    let m = k.nrows();
    let mut reg = k.clone();
    for i in 0..m {
        reg[(i, i)] += kappa;
    }
    let chol = spd_factor(&reg, 0.0)?;
    let mut rhs = DMatrix::zeros(m, 2);
    rhs.column_mut(0).copy_from(y);
    rhs.column_mut(1).fill(1.0);
    let sol = chol.solve(&rhs);
    let num: f64 = sol.column(0).sum();
    let den: f64 = sol.column(1).sum();
    let intercept = num / den;
    let coefficients = DVector::from_fn(m, |i, _| sol[(i, 0)] - intercept * sol[(i, 1)]);
    Ok(KrrFit {
        coefficients,
        intercept,
        kappa,
    })
}

/// GCV-selected ridge followed by the intercepted fit.
pub fn krr_gcv(k: &DMatrix<f64>, y: &DVector<f64>) -> Result<KrrFit, NumericsError> {
    let kappa = gcv_select(k, y, &GCV_GRID);
    krr_intercepted(k, y, kappa)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{gram, KernelSpec};
    use crate::numerics::{spd_solve, RngStream};
    use rand::Rng;

    fn toy_problem(seed: u64, m: usize) -> (DMatrix<f64>, DVector<f64>) {
        let mut rng = RngStream::new(seed, 0).rng();
        let x = DMatrix::from_fn(m, 2, |_, _| rng.random_range(-2.0..2.0));
        let spec = KernelSpec::gaussian(1.0, 0.0).unwrap();
        let k = gram(&spec, &x);
        let y = DVector::from_fn(m, |i, _| {
            (x[(i, 0)]).sin() + 0.5 * x[(i, 1)] + 0.1 * rng.random_range(-1.0..1.0)
        });
        (k, y)
    }

    #[test]
    fn residuals_of_the_intercepted_fit_sum_to_zero() {
        let (k, y) = toy_problem(31, 40);
        for kappa in [1e-3, 1e-1, 1.0] {
            let fit = krr_intercepted(&k, &y, kappa).unwrap();
            let fitted = fit.predict(&k);
            let resid_sum: f64 = (0..40).map(|i| y[i] - fitted[i]).sum();
            assert!(
                resid_sum.abs() <= 1e-8,
                "kappa {kappa}: residual sum {resid_sum}"
            );
        }
    }

    #[test]
    fn intercepted_fit_minimizes_the_penalized_objective() {
        let (k, y) = toy_problem(32, 25);
        let kappa = 0.1;
        let fit = krr_intercepted(&k, &y, kappa).unwrap();
        let objective = |alpha: &DVector<f64>, b0: f64| {
            let fitted = &k * alpha;
            let rss: f64 = (0..25).map(|i| (y[i] - fitted[i] - b0).powi(2)).sum();
            rss + kappa * (alpha.transpose() * &k * alpha)[(0, 0)]
        };
        let at_fit = objective(&fit.coefficients, fit.intercept);
        let mut rng = RngStream::new(32, 1).rng();
        for trial in 0..100 {
            let delta = DVector::from_fn(25, |_, _| rng.random_range(-1e-3..1e-3));
            let db0: f64 = rng.random_range(-1e-3..1e-3);
            let perturbed = objective(&(&fit.coefficients + delta), fit.intercept + db0);
            assert!(
                at_fit <= perturbed + 1e-10,
                "trial {trial}: perturbation lowered the objective"
            );
        }
    }

    #[test]
    fn constant_response_is_absorbed_by_the_intercept() {
        let (k, _) = toy_problem(33, 20);
        let y = DVector::from_element(20, 3.5);
        let fit = krr_intercepted(&k, &y, 0.5).unwrap();
        assert!((fit.intercept - 3.5).abs() <= 1e-8);
        assert!(fit.coefficients.amax() <= 1e-8);
    }

    #[test]
    fn gcv_scores_match_a_direct_smoother_computation() {
        let (k, y) = toy_problem(34, 20);
        let m = 20;
        let y_mean = y.mean();
        let yc = y.map(|v| v - y_mean);
        // Direct evaluation: solve (K + kappa I) S = K for the smoother S,
        // then score from its trace and residuals.
        let direct = |kappa: f64| {
            let mut reg = k.clone();
            for i in 0..m {
                reg[(i, i)] += kappa;
            }
            let s = spd_solve(&reg, &k, 0.0).unwrap();
            let fitted = s.transpose() * &yc;
            let rss: f64 = (0..m).map(|i| (yc[i] - fitted[i]).powi(2)).sum();
            let df: f64 = (0..m).map(|i| s[(i, i)]).sum();
            (rss / m as f64) / (1.0 - df / m as f64).powi(2)
        };
        let mut best_direct = (GCV_GRID[0], f64::INFINITY);
        for &kappa in &GCV_GRID {
            let score = direct(kappa);
            if score < best_direct.1 {
                best_direct = (kappa, score);
            }
        }
        let selected = gcv_select(&k, &y, &GCV_GRID);
        assert_eq!(
            selected, best_direct.0,
            "eigendecomposition and direct smoother disagree on the ridge"
        );
    }

    #[test]
    fn gcv_prefers_heavy_shrinkage_for_pure_noise() {
        let mut rng = RngStream::new(35, 0).rng();
        let x = DMatrix::from_fn(60, 2, |_, _| rng.random_range(-2.0..2.0));
        let spec = KernelSpec::gaussian(1.0, 0.0).unwrap();
        let k = gram(&spec, &x);
        let y = DVector::from_fn(60, |_, _| rng.random_range(-1.0..1.0));
        let kappa = gcv_select(&k, &y, &GCV_GRID);
        assert!(
            kappa >= 0.1,
            "pure noise selected kappa = {kappa}, expected strong shrinkage"
        );
    }

    #[test]
    fn near_interpolation_recovers_a_smooth_signal() {
        let mut rng = RngStream::new(36, 0).rng();
        let x = DMatrix::from_fn(50, 1, |_, _| rng.random_range(-2.0..2.0));
        let spec = KernelSpec::gaussian(1.0, 0.0).unwrap();
        let k = gram(&spec, &x);
        let y = DVector::from_fn(50, |i, _| (x[(i, 0)]).sin() + 2.0);
        let fit = krr_gcv(&k, &y).unwrap();
        let fitted = fit.predict(&k);
        let max_err = (0..50)
            .map(|i| (fitted[i] - y[i]).abs())
            .fold(0.0, f64::max);
        assert!(
            max_err <= 0.05,
            "noiseless smooth signal fit error {max_err}"
        );
    }
}
