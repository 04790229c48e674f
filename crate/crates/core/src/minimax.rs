//! Kernel minimax balancing weights and the augmented ATE estimator.
//!
//! Per arm a, the weights minimize the worst-case squared imbalance
//! (1/n^2)(I_a g - e)^T K (I_a g - e) + lambda sigma^2 / n^2 * ||g||^2 over
//! functions in the arm's RKHS ball; the two arms' variables are disjoint, so
//! each arm solves its own linear system.

use crate::data::{Contribution, DataError, Dataset, TreatmentCoding};
use crate::kernels::{gram, gram_cross, KernelError, KernelSpec};
use crate::numerics::{spd_solve, NumericsError};
use crate::ridge::{krr_gcv, krr_intercepted, KrrFit};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MinimaxError {
    #[error("{what}: expected length {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("no units in treatment arm {code}")]
    EmptyArm { code: i8 },
    #[error("minimax ATE estimation requires coding {expected}, dataset uses {got}")]
    WrongCoding {
        expected: TreatmentCoding,
        got: TreatmentCoding,
    },
    #[error("lambda = {lambda} must be a positive finite real")]
    BadLambda { lambda: f64 },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// How the outcome regressions m-hat are fit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OutcomeModel {
    /// Intercepted kernel ridge with a GCV-selected penalty (default).
    GcvIntercepted,
    /// Interceptless kernel ridge with penalty lambda * sigma2, reusing the
    /// weight problem's penalty scale.
    CoupledRidge,
    /// Intercepted kernel ridge at a caller-fixed penalty.
    FixedRidge(f64),
}

/// Estimator configuration shared by both arms except for the kernels.
#[derive(Clone, Debug)]
pub struct MinimaxConfig {
    pub kernel1: KernelSpec,
    pub kernel0: KernelSpec,
    pub lambda: f64,
    /// Noise level entering the weight system; None estimates it per arm as
    /// the mean squared residual of the outcome fit.
    pub sigma2: Option<f64>,
    pub outcome: OutcomeModel,
}

impl MinimaxConfig {
    pub fn new(
        kernel1: KernelSpec,
        kernel0: KernelSpec,
        lambda: f64,
    ) -> Result<Self, MinimaxError> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(MinimaxError::BadLambda { lambda });
        }
        Ok(Self {
            kernel1,
            kernel0,
            lambda,
            sigma2: None,
            outcome: OutcomeModel::GcvIntercepted,
        })
    }

    pub fn with_sigma2(mut self, sigma2: f64) -> Self {
        self.sigma2 = Some(sigma2);
        self
    }

    pub fn with_outcome(mut self, outcome: OutcomeModel) -> Self {
        self.outcome = outcome;
        self
    }
}

/// One arm's fitted weights and outcome model on a bag of n units.
#[derive(Clone, Debug)]
pub struct MinimaxArmFit {
    pub arm_code: i8,
    pub arm_indices: Vec<usize>,
    /// Weight per arm unit, aligned with `arm_indices`.
    pub gamma: Vec<f64>,
    pub lambda: f64,
    pub sigma2: f64,
    pub kernel: KernelSpec,
    pub outcome: KrrFit,
    /// Outcome predictions m-hat at every bag unit.
    pub mhat: Vec<f64>,
}

impl MinimaxArmFit {
    /// Weights scattered to full bag length, zero outside the arm.
    pub fn gamma_full(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for (pos, &i) in self.arm_indices.iter().enumerate() {
            out[i] = self.gamma[pos];
        }
        out
    }
}

/// Squared imbalance (1/n^2) v^T K v with v = I_a * gamma_full - e_n.
pub fn imbalance_sq(
    k: &DMatrix<f64>,
    arm: &[bool],
    gamma_full: &[f64],
) -> Result<f64, MinimaxError> {
    let n = k.nrows();
    if arm.len() != n {
        return Err(MinimaxError::DimensionMismatch {
            what: "arm indicator",
            expected: n,
            got: arm.len(),
        });
    }
    if gamma_full.len() != n {
        return Err(MinimaxError::DimensionMismatch {
            what: "gamma",
            expected: n,
            got: gamma_full.len(),
        });
    }
    let v = DVector::from_fn(n, |i, _| if arm[i] { gamma_full[i] - 1.0 } else { -1.0 });
    let quad = (v.transpose() * k * &v)[(0, 0)];
    Ok(quad / (n as f64 * n as f64))
}

/// Minimizer of the per-arm objective: solves
/// (K_SS + lambda sigma2 I) gamma_S = K_{S,.} e_n over the arm units S.
pub fn solve_weights(
    k: &DMatrix<f64>,
    arm: &[bool],
    lambda: f64,
    sigma2: f64,
) -> Result<Vec<f64>, MinimaxError> {
    let n = k.nrows();
    if arm.len() != n {
        return Err(MinimaxError::DimensionMismatch {
            what: "arm indicator",
            expected: n,
            got: arm.len(),
        });
    }
    let s: Vec<usize> = (0..n).filter(|&i| arm[i]).collect();
    if s.is_empty() {
        return Err(MinimaxError::EmptyArm { code: -128 });
    }
    let m = s.len();
    let mut system = DMatrix::from_fn(m, m, |r, c| k[(s[r], s[c])]);
    let ridge = lambda * sigma2;
    for i in 0..m {
        system[(i, i)] += ridge;
    }
    let rhs = DMatrix::from_fn(m, 1, |r, _| k.row(s[r]).sum());
    let sol = spd_solve(&system, &rhs, 0.0)?;
    Ok((0..m).map(|i| sol[(i, 0)]).collect())
}

/// Interceptless kernel ridge on one arm: (K_arm + ridge I) alpha = y_arm.
pub fn fit_outcome_krr(
    k_arm: &DMatrix<f64>,
    y_arm: &DVector<f64>,
    ridge: f64,
) -> Result<DVector<f64>, MinimaxError> {
    let m = k_arm.nrows();
    if y_arm.len() != m {
        return Err(MinimaxError::DimensionMismatch {
            what: "arm outcomes",
            expected: m,
            got: y_arm.len(),
        });
    }
    let mut system = k_arm.clone();
    for i in 0..m {
        system[(i, i)] += ridge;
    }
    let rhs = DMatrix::from_fn(m, 1, |r, _| y_arm[r]);
    let sol = spd_solve(&system, &rhs, 0.0)?;
    Ok(DVector::from_fn(m, |i, _| sol[(i, 0)]))
}

/// Fits one arm: outcome model on the arm's nuggetless Gram, noise level
/// resolution, then the weight system on the full with-nugget Gram.
pub fn fit_minimax_arm(
    d: &Dataset,
    kernel: &KernelSpec,
    lambda: f64,
    sigma2: Option<f64>,
    outcome_model: OutcomeModel,
    code: i8,
) -> Result<MinimaxArmFit, MinimaxError> {
    let arm_indices = d.arm_indices(code);
    if arm_indices.is_empty() {
        return Err(MinimaxError::EmptyArm { code });
    }
    let arm_data = d.select(&arm_indices);
    let base = kernel.with_sigma2(0.0)?;
    let k_arm = gram(&base, arm_data.covariates());
    let y_arm = DVector::from_column_slice(arm_data.outcomes());

    let pilot = krr_gcv(&k_arm, &y_arm)?;
    let sigma2 = match sigma2 {
        Some(v) => v,
        None => {
            let fitted = pilot.predict(&k_arm);
            (0..y_arm.len())
                .map(|i| (y_arm[i] - fitted[i]).powi(2))
                .sum::<f64>()
                / y_arm.len() as f64
        }
    };
    let outcome = match outcome_model {
        OutcomeModel::GcvIntercepted => pilot,
        OutcomeModel::FixedRidge(r) => krr_intercepted(&k_arm, &y_arm, r)?,
        OutcomeModel::CoupledRidge => {
            let alpha = fit_outcome_krr(&k_arm, &y_arm, lambda * sigma2)?;
            KrrFit {
                coefficients: alpha,
                intercept: 0.0,
                kappa: lambda * sigma2,
            }
        }
    };
    let cross = gram_cross(&base, d.covariates(), arm_data.covariates())?;
    let mhat: Vec<f64> = outcome.predict(&cross).iter().copied().collect();

    let weighted_kernel = kernel.with_sigma2(sigma2)?;
    let k_full = gram(&weighted_kernel, d.covariates());
    let arm_mask: Vec<bool> = d.treatments().iter().map(|&a| a == code).collect();
    let gamma = solve_weights(&k_full, &arm_mask, lambda, sigma2)?;

    Ok(MinimaxArmFit {
        arm_code: code,
        arm_indices,
        gamma,
        lambda,
        sigma2,
        kernel: weighted_kernel,
        outcome,
        mhat,
    })
}

/// Fits both arms under {0,1} coding; returns (treated fit, control fit).
pub fn fit_minimax(
    d: &Dataset,
    config: &MinimaxConfig,
) -> Result<(MinimaxArmFit, MinimaxArmFit), MinimaxError> {
    if d.coding() != TreatmentCoding::ZeroOne {
        return Err(MinimaxError::WrongCoding {
            expected: TreatmentCoding::ZeroOne,
            got: d.coding(),
        });
    }
    if !(config.lambda > 0.0 && config.lambda.is_finite()) {
        return Err(MinimaxError::BadLambda {
            lambda: config.lambda,
        });
    }
    let fit1 = fit_minimax_arm(
        d,
        &config.kernel1,
        config.lambda,
        config.sigma2,
        config.outcome,
        1,
    )?;
    let fit0 = fit_minimax_arm(
        d,
        &config.kernel0,
        config.lambda,
        config.sigma2,
        config.outcome,
        0,
    )?;
    Ok((fit1, fit0))
}

/// Per-unit augmented contributions
/// theta_i = psi_i(1) - psi_i(0), with
/// psi_i(a) = mhat_a(X_i) + 1(A_i = a) gamma_a(X_i) (Y_i - mhat_a(X_i)).
pub fn ate_contributions(
    d: &Dataset,
    fit1: &MinimaxArmFit,
    fit0: &MinimaxArmFit,
) -> Result<Contribution, MinimaxError> {
    let n = d.n();
    for fit in [fit1, fit0] {
        if fit.mhat.len() != n {
            return Err(MinimaxError::DimensionMismatch {
                what: "outcome predictions",
                expected: n,
                got: fit.mhat.len(),
            });
        }
    }
    let g1 = fit1.gamma_full(n);
    let g0 = fit0.gamma_full(n);
    let mut theta = Vec::with_capacity(n);
    for i in 0..n {
        let y = d.outcomes()[i];
        let a = d.treatments()[i];
        let psi1 = fit1.mhat[i]
            + if a == fit1.arm_code {
                g1[i] * (y - fit1.mhat[i])
            } else {
                0.0
            };
        let psi0 = fit0.mhat[i]
            + if a == fit0.arm_code {
                g0[i] * (y - fit0.mhat[i])
            } else {
                0.0
            };
        theta.push(psi1 - psi0);
    }
    Ok(Contribution::new(theta)?)
}

/// Full per-bag pipeline: fit both arms, emit contributions.
pub fn minimax_contributions(
    d: &Dataset,
    config: &MinimaxConfig,
) -> Result<Contribution, MinimaxError> {
    let (fit1, fit0) = fit_minimax(d, config)?;
    ate_contributions(d, &fit1, &fit0)
}
