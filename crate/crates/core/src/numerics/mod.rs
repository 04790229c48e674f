//! Deterministic numerical kit shared by the estimators and the resampler:
//! splittable random streams, an SPD linear solver with jitter escalation,
//! L-BFGS minimization, and exact multinomial count draws.

mod lbfgs;
mod linalg;
mod multinomial;
mod rng;
mod special;

pub use lbfgs::{fd_gradient, lbfgs_minimize, LbfgsOptions, LbfgsSolution};
pub use linalg::{spd_factor, spd_solve};
pub use multinomial::multinomial_draw;
pub use rng::RngStream;
pub use special::normal_cdf;

use thiserror::Error;

/// Failures of the numerical kit.
#[derive(Debug, Error)]
pub enum NumericsError {
    /// Cholesky factorization failed even after jitter escalation.
    #[error(
        "matrix of size {size} is not positive definite; \
         jitter escalation stopped at {last_jitter:.3e}"
    )]
    NotPositiveDefinite { size: usize, last_jitter: f64 },
    /// The objective or its gradient produced NaN or infinity.
    #[error("objective returned a non-finite value at iteration {iteration}")]
    NonFiniteObjective { iteration: usize },
}
