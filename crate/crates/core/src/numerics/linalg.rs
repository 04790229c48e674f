//! Symmetric positive-definite solves with jitter escalation.

use super::NumericsError;
use nalgebra::{Cholesky, DMatrix, Dyn};

/// Cholesky-factors M + jitter*I, escalating the jitter by factors of 10 up to
/// 1e-4 * trace(M)/m when the factorization fails.
///
/// The returned factorization solves (M + j*I) X = rhs for whichever jitter j
/// first succeeded. Escalation from a zero starting jitter begins at machine
/// epsilon times the mean diagonal.
pub fn spd_factor(m: &DMatrix<f64>, jitter: f64) -> Result<Cholesky<f64, Dyn>, NumericsError> {
    assert_eq!(m.nrows(), m.ncols(), "spd_factor requires a square matrix");
    assert!(jitter >= 0.0, "jitter must be nonnegative");
    let mean_diag = m.trace() / m.nrows() as f64;
    let cap = 1e-4 * mean_diag;
    let mut j = jitter;
    loop {
        let shifted = if j > 0.0 {
            let mut s = m.clone();
            for i in 0..s.nrows() {
                s[(i, i)] += j;
            }
            s
        } else {
            m.clone()
        };
        if let Some(chol) = Cholesky::new(shifted) {
            return Ok(chol);
        }
        let next = if j == 0.0 {
            f64::EPSILON * mean_diag.abs().max(f64::MIN_POSITIVE)
        } else {
            j * 10.0
        };
        // The negated form also routes a NaN jitter to the failure arm.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(next <= cap) {
            return Err(NumericsError::NotPositiveDefinite {
                size: m.nrows(),
                last_jitter: j,
            });
        }
        j = next;
    }
}

/// Solves (M + jitter*I) X = rhs for symmetric positive-definite M.
///
/// See [`spd_factor`] for the jitter escalation contract.
pub fn spd_solve(
    m: &DMatrix<f64>,
    rhs: &DMatrix<f64>,
    jitter: f64,
) -> Result<DMatrix<f64>, NumericsError> {
    assert_eq!(
        m.nrows(),
        rhs.nrows(),
        "rhs row count must match the matrix dimension"
    );
    Ok(spd_factor(m, jitter)?.solve(rhs))
}
