//! Confidence intervals for kernel-based causal estimators at large n, using a
//! causal bag of little bootstraps: the sample is split into disjoint bags, each
//! estimator is fit once per bag to produce per-unit contributions, and cheap
//! multinomial reweighting of those contributions replaces refitting when
//! forming percentile intervals.
//!
//! The crate provides three estimators that plug into the resampler:
//!
//! * kernel minimax weighting for the average treatment effect,
//! * cross-fitted double machine learning with kernel SVM nuisances,
//! * kernelized augmented outcome-weighted learning for treatment rules.
//!
//! plus the simulation designs, a timing harness, and the deterministic
//! numerical kit (splittable RNG streams, SPD solver, L-BFGS) they share.

#![allow(clippy::needless_range_loop)]

pub mod aol;
pub mod cblb;
pub mod data;
pub mod dgp;
pub mod dml;
pub mod kernels;
pub mod minimax;
pub mod numerics;
pub mod ridge;
pub mod timing;
