//! Kernelized augmented outcome-weighted learning: a residual-weighted
//! surrogate-loss policy fit, plus per-unit contributions on the criterion
//! scale and on the policy-value scale.

use crate::data::{Contribution, DataError, Dataset, TreatmentCoding};
use crate::kernels::{gram, gram_cross, KernelError, KernelSpec};
use crate::numerics::{lbfgs_minimize, LbfgsOptions, NumericsError, RngStream};
use crate::ridge::{krr_gcv, krr_intercepted, KrrFit};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use thiserror::Error;

/// Ridge grid for the per-bag lambda cross-validation.
pub const AOL_LAMBDA_GRID: [f64; 4] = [0.01, 0.1, 1.0, 10.0];

#[derive(Debug, Error)]
pub enum AolError {
    #[error("no units in treatment arm {code}")]
    EmptyArm { code: i8 },
    #[error("aol requires coding {expected}, dataset uses {got}")]
    WrongCoding {
        expected: TreatmentCoding,
        got: TreatmentCoding,
    },
    #[error("propensity {value} at row {row} is outside (0, 1]")]
    BadPropensity { row: usize, value: f64 },
    #[error("configuration field {what} = {value} is invalid")]
    BadConfig { what: &'static str, value: f64 },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Huberized hinge: zero beyond the margin, quadratic near it, linear in the
/// far tail. Returns (value, derivative); both are continuous in u.
pub fn huberized_hinge(u: f64, delta: f64) -> (f64, f64) {
    debug_assert!(delta > 0.0, "delta must be positive");
    if u >= 1.0 {
        (0.0, 0.0)
    } else if u > 1.0 - delta {
        let gap = 1.0 - u;
        (gap * gap / (2.0 * delta), -gap / delta)
    } else {
        (1.0 - u - delta / 2.0, -1.0)
    }
}

/// Residuals of a pooled intercepted kernel ridge regression of Y on X at a
/// fixed ridge.
pub fn compute_residuals(
    d: &Dataset,
    kernel: &KernelSpec,
    ridge: f64,
) -> Result<Vec<f64>, AolError> {
    let k = gram(kernel, d.covariates());
    let y = DVector::from_column_slice(d.outcomes());
    let fit = krr_intercepted(&k, &y, ridge)?;
    let fitted = fit.predict(&k);
    Ok((0..d.n()).map(|i| y[i] - fitted[i]).collect())
}

/// Residuals with the ridge selected by generalized cross-validation.
pub fn compute_residuals_gcv(d: &Dataset, kernel: &KernelSpec) -> Result<Vec<f64>, AolError> {
    let k = gram(kernel, d.covariates());
    let y = DVector::from_column_slice(d.outcomes());
    let fit = krr_gcv(&k, &y)?;
    let fitted = fit.predict(&k);
    Ok((0..d.n()).map(|i| y[i] - fitted[i]).collect())
}

/// Fitted policy: decision value at x is sum_j v_j k(x, x_j) + bias over the
/// bag units; the rule treats (+1) iff the decision value is positive.
#[derive(Clone, Debug)]
pub struct AOLFit {
    pub rep_coefs: DVector<f64>,
    pub bias: f64,
    pub kernel: KernelSpec,
    pub residuals: Vec<f64>,
    pub pi_hat: Vec<f64>,
    pub lambda: f64,
    pub huber_delta: f64,
    pub converged: bool,
    /// Bag covariates backing the representer expansion.
    pub train_x: DMatrix<f64>,
}

impl AOLFit {
    /// Decision values h(x) + bias at new points.
    pub fn decision_values(&self, x_new: &DMatrix<f64>) -> Result<Vec<f64>, AolError> {
        let cross = gram_cross(&self.kernel, x_new, &self.train_x)?;
        let h = cross * &self.rep_coefs;
        Ok((0..x_new.nrows()).map(|i| h[i] + self.bias).collect())
    }

    /// Treatment rule at new points; a zero decision value assigns -1.
    pub fn rule(&self, x_new: &DMatrix<f64>) -> Result<Vec<i8>, AolError> {
        Ok(self
            .decision_values(x_new)?
            .iter()
            .map(|&v| if v > 0.0 { 1 } else { -1 })
            .collect())
    }
}

/// Weighted surrogate objective over packed parameters [v..., bias]:
/// (1/n) sum_i w_i phi(q_i (h_i + bias)) + (lambda/2) v^T K v,
/// with w_i = |r_i| / pi_i and q_i = a_i sign(r_i).
struct AolObjective<'a> {
    k: &'a DMatrix<f64>,
    w: Vec<f64>,
    q: Vec<f64>,
    lambda: f64,
    delta: f64,
}

impl AolObjective<'_> {
    fn n(&self) -> usize {
        self.w.len()
    }

    fn eval(&self, x: &DVector<f64>, grad: &mut DVector<f64>) -> f64 {
        let n = self.n();
        let v = x.rows(0, n);
        let bias = x[n];
        let h = self.k * v;
        let mut value = 0.0;
        // t collects w_i phi'(u_i) q_i / n + lambda v_i, so grad_v = K t.
        let mut t = DVector::zeros(n);
        let mut gbias = 0.0;
        for i in 0..n {
            let u = self.q[i] * (h[i] + bias);
            let (phi, dphi) = huberized_hinge(u, self.delta);
            value += self.w[i] * phi;
            let pull = self.w[i] * dphi * self.q[i] / n as f64;
            t[i] = pull + self.lambda * v[i];
            gbias += pull;
        }
        value /= n as f64;
        value += 0.5 * self.lambda * (v.transpose() * &h)[(0, 0)];
        let gv = self.k * t;
        grad.rows_mut(0, n).copy_from(&gv);
        grad[n] = gbias;
        value
    }
}

fn check_propensities(pi_hat: &[f64]) -> Result<(), AolError> {
    for (row, &p) in pi_hat.iter().enumerate() {
        if !(p > 0.0 && p <= 1.0) {
            return Err(AolError::BadPropensity { row, value: p });
        }
    }
    Ok(())
}

/// Fits the policy for caller-supplied residuals.
pub fn fit_aol_with_residuals(
    d: &Dataset,
    kernel: &KernelSpec,
    lambda: f64,
    delta: f64,
    pi_hat: &[f64],
    residuals: &[f64],
) -> Result<AOLFit, AolError> {
    if d.coding() != TreatmentCoding::PlusMinus {
        return Err(AolError::WrongCoding {
            expected: TreatmentCoding::PlusMinus,
            got: d.coding(),
        });
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(AolError::BadConfig {
            what: "lambda",
            value: lambda,
        });
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(AolError::BadConfig {
            what: "huber_delta",
            value: delta,
        });
    }
    check_propensities(pi_hat)?;
    let n = d.n();
    assert!(pi_hat.len() == n, "propensities must match the bag size");
    assert!(residuals.len() == n, "residuals must match the bag size");

    let k = gram(kernel, d.covariates());
    let w: Vec<f64> = (0..n).map(|i| residuals[i].abs() / pi_hat[i]).collect();
    let q: Vec<f64> = (0..n)
        .map(|i| f64::from(d.treatments()[i]) * residuals[i].signum())
        .collect();
    let objective = AolObjective {
        k: &k,
        w,
        q,
        lambda,
        delta,
    };
    let x0 = DVector::zeros(n + 1);
    let solution = lbfgs_minimize(|x, g| objective.eval(x, g), x0, &LbfgsOptions::default())?;
    let rep_coefs = DVector::from_fn(n, |i, _| solution.x[i]);
    Ok(AOLFit {
        rep_coefs,
        bias: solution.x[n],
        kernel: *kernel,
        residuals: residuals.to_vec(),
        pi_hat: pi_hat.to_vec(),
        lambda,
        huber_delta: delta,
        converged: solution.converged,
        train_x: d.covariates().clone(),
    })
}

/// Fits the policy at a fixed lambda, computing pooled GCV ridge residuals
/// first.
pub fn fit_aol(
    d: &Dataset,
    kernel: &KernelSpec,
    lambda: f64,
    delta: f64,
    pi_hat: &[f64],
) -> Result<AOLFit, AolError> {
    let residuals = compute_residuals_gcv(d, kernel)?;
    fit_aol_with_residuals(d, kernel, lambda, delta, pi_hat, &residuals)
}

/// Selects lambda by k-fold cross-validation on the held-out weighted
/// surrogate loss, then refits on the whole bag. Residuals are computed once
/// on the whole bag and sliced per fold.
pub fn fit_aol_cv(
    d: &Dataset,
    kernel: &KernelSpec,
    lambda_grid: &[f64],
    delta: f64,
    pi_hat: &[f64],
    cv_folds: usize,
    stream: &RngStream,
) -> Result<AOLFit, AolError> {
    assert!(!lambda_grid.is_empty(), "the lambda grid must be non-empty");
    let n = d.n();
    let residuals = compute_residuals_gcv(d, kernel)?;
    if lambda_grid.len() == 1 || n < 2 * cv_folds {
        return fit_aol_with_residuals(d, kernel, lambda_grid[0], delta, pi_hat, &residuals);
    }

    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream.rng());
    let mut best = (lambda_grid[0], f64::INFINITY);
    for &lambda in lambda_grid {
        let mut held_loss = 0.0;
        for fold in 0..cv_folds {
            let held: Vec<usize> = perm.iter().copied().skip(fold).step_by(cv_folds).collect();
            let train: Vec<usize> = perm.iter().copied().filter(|i| !held.contains(i)).collect();
            let train_d = d.select(&train);
            let train_pi: Vec<f64> = train.iter().map(|&i| pi_hat[i]).collect();
            let train_res: Vec<f64> = train.iter().map(|&i| residuals[i]).collect();
            let fit =
                fit_aol_with_residuals(&train_d, kernel, lambda, delta, &train_pi, &train_res)?;
            let held_x = DMatrix::from_fn(held.len(), d.p(), |r, c| d.covariates()[(held[r], c)]);
            let decisions = fit.decision_values(&held_x)?;
            for (r, &i) in held.iter().enumerate() {
                let u = f64::from(d.treatments()[i]) * residuals[i].signum() * decisions[r];
                let (phi, _) = huberized_hinge(u, delta);
                held_loss += residuals[i].abs() / pi_hat[i] * phi;
            }
        }
        if held_loss < best.1 {
            best = (lambda, held_loss);
        }
    }
    fit_aol_with_residuals(d, kernel, best.0, delta, pi_hat, &residuals)
}

/// Per-unit criterion terms: theta_i = w_i phi(q_i (h_i + bias)).
pub fn aol_loss_contributions(d: &Dataset, fit: &AOLFit) -> Result<Contribution, AolError> {
    let decisions = fit.decision_values(d.covariates())?;
    let n = d.n();
    let mut theta = Vec::with_capacity(n);
    for i in 0..n {
        let r = fit.residuals[i];
        let u = f64::from(d.treatments()[i]) * r.signum() * decisions[i];
        let (phi, _) = huberized_hinge(u, fit.huber_delta);
        theta.push(r.abs() / fit.pi_hat[i] * phi);
    }
    Ok(Contribution::new(theta)?)
}

/// Per-arm outcome predictions and the probability of treatment +1 at each
/// bag unit, feeding the value contributions.
#[derive(Clone, Debug)]
pub struct ValueNuisances {
    pub m_plus: Vec<f64>,
    pub m_minus: Vec<f64>,
    pub pi_plus: Vec<f64>,
}

/// Per-arm intercepted GCV kernel ridge fits evaluated at every bag unit;
/// the propensity is the known randomization probability.
pub fn fit_value_nuisances(
    d: &Dataset,
    kernel: &KernelSpec,
    pi_plus: f64,
) -> Result<ValueNuisances, AolError> {
    let mut preds: Vec<Vec<f64>> = Vec::with_capacity(2);
    for code in [1i8, -1] {
        let idx = d.arm_indices(code);
        if idx.is_empty() {
            return Err(AolError::EmptyArm { code });
        }
        let arm = d.select(&idx);
        let k = gram(kernel, arm.covariates());
        let y = DVector::from_column_slice(arm.outcomes());
        let fit: KrrFit = krr_gcv(&k, &y)?;
        let cross = gram_cross(kernel, d.covariates(), arm.covariates())?;
        preds.push(fit.predict(&cross).iter().copied().collect());
    }
    let m_minus = preds.pop().expect("two arms fitted");
    let m_plus = preds.pop().expect("two arms fitted");
    Ok(ValueNuisances {
        m_plus,
        m_minus,
        pi_plus: vec![pi_plus; d.n()],
    })
}

/// AIPW value terms for a fixed rule under {-1,+1} treatments:
/// theta_i = m_{rule_i}(X_i) + 1(A_i = rule_i)(Y_i - m_{rule_i}(X_i)) / pi(rule_i | X_i).
pub fn policy_value_scores(
    y: &[f64],
    w: &[i8],
    rule: &[i8],
    nuisances: &ValueNuisances,
) -> Vec<f64> {
    let n = y.len();
    assert!(
        w.len() == n
            && rule.len() == n
            && nuisances.m_plus.len() == n
            && nuisances.m_minus.len() == n
            && nuisances.pi_plus.len() == n,
        "value score inputs must share one length"
    );
    (0..n)
        .map(|i| {
            let m = if rule[i] == 1 {
                nuisances.m_plus[i]
            } else {
                nuisances.m_minus[i]
            };
            let pi = if rule[i] == 1 {
                nuisances.pi_plus[i]
            } else {
                1.0 - nuisances.pi_plus[i]
            };
            m + if w[i] == rule[i] {
                (y[i] - m) / pi
            } else {
                0.0
            }
        })
        .collect()
}

/// Value contributions of the fitted rule on its own bag.
pub fn aol_value_contributions(
    d: &Dataset,
    fit: &AOLFit,
    nuisances: &ValueNuisances,
) -> Result<Contribution, AolError> {
    let rule = fit.rule(d.covariates())?;
    let theta = policy_value_scores(d.outcomes(), d.treatments(), &rule, nuisances);
    Ok(Contribution::new(theta)?)
}

/// Bag-level configuration for both AOL contribution kinds.
#[derive(Clone, Debug)]
pub struct AOLConfig {
    pub kernel: KernelSpec,
    pub lambda_grid: Vec<f64>,
    pub huber_delta: f64,
    /// Known probability of treatment +1 under randomization.
    pub propensity: f64,
    pub cv_folds: usize,
}

impl Default for AOLConfig {
    fn default() -> Self {
        Self {
            kernel: KernelSpec::linear(),
            lambda_grid: AOL_LAMBDA_GRID.to_vec(),
            huber_delta: 1.0,
            propensity: 0.5,
            cv_folds: 5,
        }
    }
}

impl AOLConfig {
    pub fn validate(&self) -> Result<(), AolError> {
        if !(self.propensity > 0.0 && self.propensity < 1.0) {
            return Err(AolError::BadConfig {
                what: "propensity",
                value: self.propensity,
            });
        }
        if self.lambda_grid.is_empty() {
            return Err(AolError::BadConfig {
                what: "lambda_grid",
                value: f64::NAN,
            });
        }
        if self.cv_folds < 2 {
            return Err(AolError::BadConfig {
                what: "cv_folds",
                value: self.cv_folds as f64,
            });
        }
        Ok(())
    }
}

/// Full per-bag pipeline for the value estimand: residuals, lambda CV, policy
/// fit, per-arm outcome models, AIPW value terms.
pub fn aol_value_pipeline(
    d: &Dataset,
    cfg: &AOLConfig,
    stream: &RngStream,
) -> Result<Contribution, AolError> {
    cfg.validate()?;
    let pi_hat = vec![cfg.propensity; d.n()];
    let fit = fit_aol_cv(
        d,
        &cfg.kernel,
        &cfg.lambda_grid,
        cfg.huber_delta,
        &pi_hat,
        cfg.cv_folds,
        stream,
    )?;
    let nuisances = fit_value_nuisances(d, &cfg.kernel, cfg.propensity)?;
    aol_value_contributions(d, &fit, &nuisances)
}

/// Full per-bag pipeline for the criterion estimand.
pub fn aol_loss_pipeline(
    d: &Dataset,
    cfg: &AOLConfig,
    stream: &RngStream,
) -> Result<Contribution, AolError> {
    cfg.validate()?;
    let pi_hat = vec![cfg.propensity; d.n()];
    let fit = fit_aol_cv(
        d,
        &cfg.kernel,
        &cfg.lambda_grid,
        cfg.huber_delta,
        &pi_hat,
        cfg.cv_folds,
        stream,
    )?;
    aol_loss_contributions(d, &fit)
}
