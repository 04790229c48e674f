//! Cross-fitted double machine learning for the ATE with kernel SVM
//! nuisance learners.
//!
//! The propensity is a soft-margin SVM classifier whose margins are mapped to
//! probabilities by Platt scaling and clipped away from 0 and 1; the outcome
//! regressions are per-arm epsilon-insensitive SVRs. Both duals are solved by
//! an SMO loop with maximal-violating-pair selection on the shared form
//! min 1/2 a^T Q a + p^T a subject to y^T a = 0, 0 <= a <= C.

use crate::data::{Contribution, DataError, Dataset, TreatmentCoding};
use crate::kernels::{gram, gram_cross, KernelError, KernelSpec};
use crate::numerics::{NumericsError, RngStream};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DmlError {
    #[error("{k} folds cannot partition {n} units")]
    TooManyFolds { k: usize, n: usize },
    #[error("configuration field {what} = {value} is invalid")]
    BadConfig { what: &'static str, value: f64 },
    #[error("a training complement lacked two units in each arm after {attempts} fold draws")]
    SingleClassFold { attempts: usize },
    #[error("labels contain a single class")]
    SingleClassLabels,
    #[error("SMO did not reach the KKT tolerance within {iterations} iterations")]
    MaxIterations { iterations: usize },
    #[error("SMO made no feasible progress at optimality gap {gap}")]
    SolverStalled { gap: f64 },
    #[error("dml estimation requires coding {expected}, dataset uses {got}")]
    WrongCoding {
        expected: TreatmentCoding,
        got: TreatmentCoding,
    },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Cross-fitting and nuisance-learner configuration.
#[derive(Clone, Debug)]
pub struct DMLConfig {
    pub n_folds: usize,
    pub svm_cost: f64,
    pub svr_epsilon: f64,
    pub kernel: KernelSpec,
    pub propensity_clip: f64,
    pub platt_max_iter: usize,
}

impl Default for DMLConfig {
    fn default() -> Self {
        Self {
            n_folds: 5,
            svm_cost: 1.0,
            svr_epsilon: 0.1,
            kernel: KernelSpec::linear(),
            propensity_clip: 0.01,
            platt_max_iter: 100,
        }
    }
}

impl DMLConfig {
    pub fn validate(&self) -> Result<(), DmlError> {
        if self.n_folds < 2 {
            return Err(DmlError::BadConfig {
                what: "n_folds",
                value: self.n_folds as f64,
            });
        }
        if !(self.svm_cost > 0.0 && self.svm_cost.is_finite()) {
            return Err(DmlError::BadConfig {
                what: "svm_cost",
                value: self.svm_cost,
            });
        }
        if !(self.svr_epsilon >= 0.0 && self.svr_epsilon.is_finite()) {
            return Err(DmlError::BadConfig {
                what: "svr_epsilon",
                value: self.svr_epsilon,
            });
        }
        if !(self.propensity_clip > 0.0 && self.propensity_clip < 0.5) {
            return Err(DmlError::BadConfig {
                what: "propensity_clip",
                value: self.propensity_clip,
            });
        }
        Ok(())
    }
}

/// Disjoint folds covering 0..n, sizes differing by at most one, assigned by
/// chunking a uniform random permutation.
pub fn kfold_split(stream: &RngStream, n: usize, k: usize) -> Result<Vec<Vec<usize>>, DmlError> {
    if k > n || k == 0 {
        return Err(DmlError::TooManyFolds { k, n });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream.rng());
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut cursor = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        folds.push(perm[cursor..cursor + size].to_vec());
        cursor += size;
    }
    Ok(folds)
}

/// KKT tolerance shared by both duals.
const SMO_TOL: f64 = 1e-4;

/// Uniform-box SMO. `row` writes row t of Q into the buffer. Returns the
/// duals, the offset rho (bias is -rho), and the final optimality gap.
fn smo_solve<R: FnMut(usize, &mut [f64])>(
    n_vars: usize,
    y: &[f64],
    p: &[f64],
    cost: f64,
    mut row: R,
) -> Result<(Vec<f64>, f64, f64), DmlError> {
    let mut alpha = vec![0.0; n_vars];
    let mut g = p.to_vec();
    let mut row_i = vec![0.0; n_vars];
    let mut row_j = vec![0.0; n_vars];
    let max_iter = 1_000_000.max(200 * n_vars);
    let mut gap = f64::INFINITY;
    let mut converged = false;
    for iter in 0..=max_iter {
        // Maximal violating pair: i maximizes -y G over the set that can move
        // up, j minimizes it over the set that can move down.
        let mut i = usize::MAX;
        let mut j = usize::MAX;
        let mut up_val = f64::NEG_INFINITY;
        let mut low_val = f64::INFINITY;
        for t in 0..n_vars {
            let v = -y[t] * g[t];
            let movable_up = (y[t] > 0.0 && alpha[t] < cost) || (y[t] < 0.0 && alpha[t] > 0.0);
            let movable_down = (y[t] > 0.0 && alpha[t] > 0.0) || (y[t] < 0.0 && alpha[t] < cost);
            if movable_up && v > up_val {
                up_val = v;
                i = t;
            }
            if movable_down && v < low_val {
                low_val = v;
                j = t;
            }
        }
        gap = up_val - low_val;
        if gap <= SMO_TOL {
            converged = true;
            break;
        }
        if iter == max_iter {
            break;
        }
        row(i, &mut row_i);
        row(j, &mut row_j);
        let mut curvature = row_i[i] + row_j[j] - 2.0 * y[i] * y[j] * row_i[j];
        if curvature <= 1e-12 {
            curvature = 1e-12;
        }
        // Step t moves alpha_i by y_i t and alpha_j by -y_j t, preserving the
        // equality constraint.
        let step_unc = gap / curvature;
        let cap_i = if y[i] > 0.0 {
            cost - alpha[i]
        } else {
            alpha[i]
        };
        let cap_j = if y[j] > 0.0 {
            alpha[j]
        } else {
            cost - alpha[j]
        };
        let step = step_unc.min(cap_i).min(cap_j);
        // The negated form also routes a NaN step to the stall error.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(step > 0.0) {
            return Err(DmlError::SolverStalled { gap });
        }
        alpha[i] = (alpha[i] + y[i] * step).clamp(0.0, cost);
        alpha[j] = (alpha[j] - y[j] * step).clamp(0.0, cost);
        for t in 0..n_vars {
            g[t] += step * (y[i] * row_i[t] - y[j] * row_j[t]);
        }
    }
    if !converged {
        return Err(DmlError::MaxIterations {
            iterations: max_iter,
        });
    }
    // Offset: average y G over free variables, else the midpoint of the
    // feasible interval from the bound variables.
    let mut upper = f64::INFINITY;
    let mut lower = f64::NEG_INFINITY;
    let mut sum_free = 0.0;
    let mut n_free = 0usize;
    for t in 0..n_vars {
        let yg = y[t] * g[t];
        if alpha[t] >= cost {
            if y[t] < 0.0 {
                upper = upper.min(yg);
            } else {
                lower = lower.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                upper = upper.min(yg);
            } else {
                lower = lower.max(yg);
            }
        } else {
            sum_free += yg;
            n_free += 1;
        }
    }
    let rho = if n_free > 0 {
        sum_free / n_free as f64
    } else {
        (upper + lower) / 2.0
    };
    Ok((alpha, rho, gap))
}

/// Fitted SVM classifier; `coef` holds alpha_j y_j per training unit.
#[derive(Clone, Debug)]
pub struct SvmFit {
    pub coef: Vec<f64>,
    pub bias: f64,
    pub kkt_gap: f64,
}

impl SvmFit {
    /// Decision values from a cross-Gram whose columns index training units.
    pub fn decision(&self, cross: &DMatrix<f64>) -> Vec<f64> {
        (0..cross.nrows())
            .map(|r| {
                let mut acc = self.bias;
                for (jj, c) in self.coef.iter().enumerate() {
                    acc += c * cross[(r, jj)];
                }
                acc
            })
            .collect()
    }
}

/// Soft-margin kernel SVM dual on a precomputed Gram matrix.
pub fn fit_svm_classifier(
    k_train: &DMatrix<f64>,
    labels: &[i8],
    cost: f64,
) -> Result<SvmFit, DmlError> {
    let m = k_train.nrows();
    assert!(labels.len() == m, "labels must match the Gram dimension");
    if !labels.iter().any(|&l| l > 0) || !labels.iter().any(|&l| l < 0) {
        return Err(DmlError::SingleClassLabels);
    }
    let y: Vec<f64> = labels.iter().map(|&l| f64::from(l.signum())).collect();
    let p = vec![-1.0; m];
    let (alpha, rho, gap) = smo_solve(m, &y, &p, cost, |t, buf| {
        // Q[t][u] = y_t y_u K[t][u]; the Gram is symmetric, so column t is
        // row t and reads contiguously.
        for u in 0..m {
            buf[u] = y[t] * y[u] * k_train[(u, t)];
        }
    })?;
    let coef: Vec<f64> = (0..m).map(|t| alpha[t] * y[t]).collect();
    Ok(SvmFit {
        coef,
        bias: -rho,
        kkt_gap: gap,
    })
}

/// Fitted SVR; `beta` holds alpha_plus - alpha_minus per training unit.
#[derive(Clone, Debug)]
pub struct SvrFit {
    pub beta: Vec<f64>,
    pub bias: f64,
    pub kkt_gap: f64,
}

impl SvrFit {
    pub fn predict(&self, cross: &DMatrix<f64>) -> Vec<f64> {
        (0..cross.nrows())
            .map(|r| {
                let mut acc = self.bias;
                for (jj, b) in self.beta.iter().enumerate() {
                    acc += b * cross[(r, jj)];
                }
                acc
            })
            .collect()
    }
}

/// Epsilon-insensitive kernel SVR dual on a precomputed Gram matrix. The 2m
/// variables are (alpha_plus, alpha_minus) with signs (+1, -1); row t of Q is
/// a sign-flipped copy of Gram row t mod m.
pub fn fit_svr(
    k_train: &DMatrix<f64>,
    y: &[f64],
    cost: f64,
    epsilon: f64,
) -> Result<SvrFit, DmlError> {
    let m = k_train.nrows();
    assert!(y.len() == m, "outcomes must match the Gram dimension");
    let n_vars = 2 * m;
    let mut sign = vec![1.0; n_vars];
    let mut p = vec![0.0; n_vars];
    for t in 0..m {
        sign[t + m] = -1.0;
        p[t] = epsilon - y[t];
        p[t + m] = epsilon + y[t];
    }
    let (alpha, rho, gap) = smo_solve(n_vars, &sign, &p, cost, |t, buf| {
        let base = t % m;
        let st = sign[t];
        for u in 0..m {
            let k = k_train[(u, base)];
            buf[u] = st * k;
            buf[u + m] = -st * k;
        }
    })?;
    let beta: Vec<f64> = (0..m).map(|t| alpha[t] - alpha[t + m]).collect();
    Ok(SvrFit {
        beta,
        bias: -rho,
        kkt_gap: gap,
    })
}

/// Platt scaling fit: P(y = +1 | f) = 1 / (1 + exp(a f + b)). `informative`
/// is true when a <= 0, i.e. larger margins increase the probability.
#[derive(Clone, Copy, Debug)]
pub struct PlattFit {
    pub a: f64,
    pub b: f64,
    pub informative: bool,
}

impl PlattFit {
    pub fn probability(&self, f: f64) -> f64 {
        let z = self.a * f + self.b;
        if z >= 0.0 {
            let e = (-z).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + z.exp())
        }
    }
}

/// Penalized-likelihood sigmoid fit with smoothed targets
/// (N+ + 1)/(N+ + 2) and 1/(N- + 2), solved by a damped Newton iteration.
pub fn platt_calibrate(
    decision_values: &[f64],
    labels: &[i8],
    max_iter: usize,
) -> Result<PlattFit, DmlError> {
    assert!(
        decision_values.len() == labels.len(),
        "decision values must match labels"
    );
    let n_pos = labels.iter().filter(|&&l| l > 0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(DmlError::SingleClassLabels);
    }
    let hi = (n_pos as f64 + 1.0) / (n_pos as f64 + 2.0);
    let lo = 1.0 / (n_neg as f64 + 2.0);
    let targets: Vec<f64> = labels
        .iter()
        .map(|&l| if l > 0 { hi } else { lo })
        .collect();

    let objective = |a: f64, b: f64| -> f64 {
        let mut fval = 0.0;
        for (f, t) in decision_values.iter().zip(&targets) {
            let z = a * f + b;
            fval += if z >= 0.0 {
                t * z + (1.0 + (-z).exp()).ln()
            } else {
                (t - 1.0) * z + (1.0 + z.exp()).ln()
            };
        }
        fval
    };

    let mut a = 0.0;
    let mut b = ((n_neg as f64 + 1.0) / (n_pos as f64 + 1.0)).ln();
    let mut fval = objective(a, b);
    for _ in 0..max_iter {
        let (mut h11, mut h22) = (1e-12, 1e-12);
        let mut h21 = 0.0;
        let (mut g1, mut g2) = (0.0, 0.0);
        for (f, t) in decision_values.iter().zip(&targets) {
            let z = a * f + b;
            let (pq_p, pq_q) = if z >= 0.0 {
                let e = (-z).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = z.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = pq_p * pq_q;
            h11 += f * f * d2;
            h22 += d2;
            h21 += f * d2;
            let d1 = t - pq_p;
            g1 += f * d1;
            g2 += d1;
        }
        if g1.abs() < 1e-5 && g2.abs() < 1e-5 {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        loop {
            let na = a + step * da;
            let nb = b + step * db;
            let nf = objective(na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                break;
            }
            step /= 2.0;
            if step < 1e-10 {
                // Line search exhausted; the current point is as good as the
                // quadratic model allows.
                return Ok(PlattFit {
                    a,
                    b,
                    informative: a <= 0.0,
                });
            }
        }
    }
    Ok(PlattFit {
        a,
        b,
        informative: a <= 0.0,
    })
}

/// AIPW score per unit under {0,1} treatments:
/// theta_i = m1_i - m0_i + W_i (Y_i - m1_i)/pi_i - (1 - W_i)(Y_i - m0_i)/(1 - pi_i),
/// with pi clipped into [clip, 1 - clip] before any division.
pub fn aipw_scores(y: &[f64], w: &[i8], m1: &[f64], m0: &[f64], pi: &[f64], clip: f64) -> Vec<f64> {
    let n = y.len();
    assert!(
        w.len() == n && m1.len() == n && m0.len() == n && pi.len() == n,
        "aipw inputs must share one length"
    );
    (0..n)
        .map(|i| {
            let p = pi[i].clamp(clip, 1.0 - clip);
            let psi1 = m1[i] + if w[i] == 1 { (y[i] - m1[i]) / p } else { 0.0 };
            let psi0 = m0[i]
                + if w[i] == 0 {
                    (y[i] - m0[i]) / (1.0 - p)
                } else {
                    0.0
                };
            psi1 - psi0
        })
        .collect()
}

/// Cross-fitting record kept for honesty checks.
#[derive(Clone, Debug)]
pub struct DmlDetail {
    pub contributions: Contribution,
    /// Fold index each unit was held out in.
    pub fold_of: Vec<usize>,
    /// Training indices used for each fold's models.
    pub train_sets: Vec<Vec<usize>>,
    /// Clipped propensities used in each unit's score.
    pub propensities: Vec<f64>,
    /// Fold draws consumed before every complement was trainable.
    pub attempts: usize,
}

/// Cross-fitted DML contributions with full bookkeeping.
pub fn dml_contributions_detailed(
    d: &Dataset,
    cfg: &DMLConfig,
    stream: &RngStream,
) -> Result<DmlDetail, DmlError> {
    cfg.validate()?;
    if d.coding() != TreatmentCoding::ZeroOne {
        return Err(DmlError::WrongCoding {
            expected: TreatmentCoding::ZeroOne,
            got: d.coding(),
        });
    }
    let n = d.n();
    if cfg.n_folds > n {
        return Err(DmlError::TooManyFolds { k: cfg.n_folds, n });
    }

    // Every training complement needs two units per arm: the SVMs need both
    // classes and the per-arm SVRs need two points. Redraw on failure.
    const MAX_ATTEMPTS: usize = 10;
    let mut chosen: Option<(Vec<Vec<usize>>, usize)> = None;
    for attempt in 0..MAX_ATTEMPTS {
        let folds = kfold_split(&stream.substream(&[attempt as u64]), n, cfg.n_folds)?;
        let ok = folds.iter().all(|fold| {
            let held: std::collections::HashSet<usize> = fold.iter().copied().collect();
            let mut treated = 0;
            let mut control = 0;
            for i in 0..n {
                if !held.contains(&i) {
                    if d.treatments()[i] == 1 {
                        treated += 1;
                    } else {
                        control += 1;
                    }
                }
            }
            treated >= 2 && control >= 2
        });
        if ok {
            chosen = Some((folds, attempt + 1));
            break;
        }
    }
    let (folds, attempts) = chosen.ok_or(DmlError::SingleClassFold {
        attempts: MAX_ATTEMPTS,
    })?;

    let mut theta = vec![0.0; n];
    let mut fold_of = vec![0usize; n];
    let mut propensities = vec![0.0; n];
    let mut train_sets = Vec::with_capacity(folds.len());
    for (fold_id, fold) in folds.iter().enumerate() {
        let held: std::collections::HashSet<usize> = fold.iter().copied().collect();
        let train: Vec<usize> = (0..n).filter(|i| !held.contains(i)).collect();
        let train_data = d.select(&train);
        let fold_data = d.select(fold);

        // Propensity: SVM on the complement, Platt scaling fit on the
        // complement's own decision values, then clipping.
        let k_train = gram(&cfg.kernel, train_data.covariates());
        let labels: Vec<i8> = train_data
            .treatments()
            .iter()
            .map(|&a| if a == 1 { 1 } else { -1 })
            .collect();
        let svm = fit_svm_classifier(&k_train, &labels, cfg.svm_cost)?;
        let train_decisions = svm.decision(&k_train);
        let platt = platt_calibrate(&train_decisions, &labels, cfg.platt_max_iter)?;

        // Outcome regressions on each complement arm.
        let arm1: Vec<usize> = (0..train.len())
            .filter(|&r| train_data.treatments()[r] == 1)
            .collect();
        let arm0: Vec<usize> = (0..train.len())
            .filter(|&r| train_data.treatments()[r] == 0)
            .collect();
        let arm1_data = train_data.select(&arm1);
        let arm0_data = train_data.select(&arm0);
        let svr1 = fit_svr(
            &gram(&cfg.kernel, arm1_data.covariates()),
            arm1_data.outcomes(),
            cfg.svm_cost,
            cfg.svr_epsilon,
        )?;
        let svr0 = fit_svr(
            &gram(&cfg.kernel, arm0_data.covariates()),
            arm0_data.outcomes(),
            cfg.svm_cost,
            cfg.svr_epsilon,
        )?;

        // Held-out evaluation.
        let cross_all = gram_cross(&cfg.kernel, fold_data.covariates(), train_data.covariates())?;
        let decisions = svm.decision(&cross_all);
        let cross1 = gram_cross(&cfg.kernel, fold_data.covariates(), arm1_data.covariates())?;
        let cross0 = gram_cross(&cfg.kernel, fold_data.covariates(), arm0_data.covariates())?;
        let m1 = svr1.predict(&cross1);
        let m0 = svr0.predict(&cross0);
        let pi: Vec<f64> = decisions.iter().map(|&f| platt.probability(f)).collect();
        let scores = aipw_scores(
            fold_data.outcomes(),
            fold_data.treatments(),
            &m1,
            &m0,
            &pi,
            cfg.propensity_clip,
        );
        for (r, &i) in fold.iter().enumerate() {
            theta[i] = scores[r];
            fold_of[i] = fold_id;
            propensities[i] = pi[r].clamp(cfg.propensity_clip, 1.0 - cfg.propensity_clip);
        }
        train_sets.push(train);
    }
    Ok(DmlDetail {
        contributions: Contribution::new(theta)?,
        fold_of,
        train_sets,
        propensities,
        attempts,
    })
}

/// Cross-fitted DML contributions in original unit order.
pub fn dml_contributions(
    d: &Dataset,
    cfg: &DMLConfig,
    stream: &RngStream,
) -> Result<Contribution, DmlError> {
    Ok(dml_contributions_detailed(d, cfg, stream)?.contributions)
}
