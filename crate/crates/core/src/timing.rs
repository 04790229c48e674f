//! Wall-clock comparison of the bagged bootstrap against the full-sample
//! no-refit bootstrap, plus a log-log scaling fit across sample sizes.

use crate::cblb::{run_cblb_timed, CblbError, EstimatorPlugin, PluginError};
use crate::data::{CBLBConfig, Contribution, Dataset};
use crate::numerics::RngStream;
use std::collections::BTreeMap;
use std::fmt;
use std::hint::black_box;
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Cblb,
    FullBootstrap,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Cblb => "cblb",
            Method::FullBootstrap => "full_bootstrap",
        })
    }
}

/// One timed run of one method.
#[derive(Clone, Debug)]
pub struct TimingRecord {
    pub method: Method,
    pub estimator: String,
    pub n: usize,
    pub b: usize,
    pub s: usize,
    pub r: usize,
    pub fit_seconds: f64,
    pub resample_seconds: f64,
    pub total_seconds: f64,
    pub repetition: usize,
}

#[derive(Debug, Error)]
pub enum TimingError {
    #[error("scaling fit for {method} needs at least 4 distinct n, found {distinct}")]
    InsufficientGrid { method: Method, distinct: usize },
    #[error(transparent)]
    Cblb(#[from] CblbError),
}

/// Times both methods on the same data with identical seeds at the default
/// single worker, excluding one warm-up run of each.
pub fn benchmark(
    plugin: &dyn EstimatorPlugin,
    d: &Dataset,
    cfg: &CBLBConfig,
    repetitions: usize,
) -> Result<Vec<TimingRecord>, TimingError> {
    benchmark_with_workers(plugin, d, cfg, repetitions, 1)
}

/// benchmark with an explicit bag-level worker count. Phase sums behave like
/// CPU time when workers > 1, so cross-machine comparisons should stick to
/// one worker.
pub fn benchmark_with_workers(
    plugin: &dyn EstimatorPlugin,
    d: &Dataset,
    cfg: &CBLBConfig,
    repetitions: usize,
    workers: usize,
) -> Result<Vec<TimingRecord>, TimingError> {
    assert!(repetitions >= 1, "at least one repetition is required");
    assert!(workers >= 1, "at least one worker is required");
    let full_cfg =
        CBLBConfig::from_bag_size(d.n(), d.n(), Some(1), cfg.n_replicates, cfg.alpha, cfg.seed)
            .map_err(CblbError::from)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("worker pool construction cannot fail for positive counts");
    pool.install(|| {
        run_cblb_timed(d, plugin, cfg)?;
        run_cblb_timed(d, plugin, &full_cfg)?;
        let mut records = Vec::with_capacity(2 * repetitions);
        for repetition in 0..repetitions {
            for (method, run_cfg) in [(Method::Cblb, cfg), (Method::FullBootstrap, &full_cfg)] {
                let (result, _, phases) = run_cblb_timed(d, plugin, run_cfg)?;
                records.push(TimingRecord {
                    method,
                    estimator: plugin.name().to_string(),
                    n: d.n(),
                    b: run_cfg.bag_size,
                    s: run_cfg.n_bags,
                    r: run_cfg.n_replicates,
                    fit_seconds: phases.fit_seconds,
                    resample_seconds: phases.resample_seconds,
                    total_seconds: result.wall_time_seconds,
                    repetition,
                });
            }
        }
        Ok(records)
    })
}

/// Least-squares exponent of total time in n for one method.
#[derive(Clone, Copy, Debug)]
pub struct ScalingEstimate {
    pub method: Method,
    pub exponent: f64,
    pub distinct_n: usize,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
    let m = xs.len();
    if m % 2 == 1 {
        xs[m / 2]
    } else {
        0.5 * (xs[m / 2 - 1] + xs[m / 2])
    }
}

/// Fits log(median total seconds) on log(n) per method. Repetitions at the
/// same n collapse to their median first.
pub fn scaling_fit(records: &[TimingRecord]) -> Result<Vec<ScalingEstimate>, TimingError> {
    let mut estimates = Vec::new();
    for method in [Method::Cblb, Method::FullBootstrap] {
        let mut by_n: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for rec in records.iter().filter(|rec| rec.method == method) {
            by_n.entry(rec.n).or_default().push(rec.total_seconds);
        }
        if by_n.is_empty() {
            continue;
        }
        let distinct = by_n.len();
        if distinct < 4 {
            return Err(TimingError::InsufficientGrid { method, distinct });
        }
        let points: Vec<(f64, f64)> = by_n
            .into_iter()
            .map(|(n, totals)| ((n as f64).ln(), median(totals).ln()))
            .collect();
        let xbar = points.iter().map(|p| p.0).sum::<f64>() / distinct as f64;
        let ybar = points.iter().map(|p| p.1).sum::<f64>() / distinct as f64;
        let sxy: f64 = points.iter().map(|p| (p.0 - xbar) * (p.1 - ybar)).sum();
        let sxx: f64 = points.iter().map(|p| (p.0 - xbar).powi(2)).sum();
        estimates.push(ScalingEstimate {
            method,
            exponent: sxy / sxx,
            distinct_n: distinct,
        });
    }
    Ok(estimates)
}

fn spin(steps: u64) {
    let mut acc: u64 = 0x9e37_79b9_7f4a_7c15;
    for _ in 0..steps {
        acc = black_box(
            acc.wrapping_mul(6_364_136_223_846_793_005)
                .wrapping_add(1_442_695_040_888_963_407),
        );
    }
    black_box(acc);
}

/// Deterministic plugin whose fit cost grows as the square of the bag size.
pub struct SyntheticQuadratic {
    pub steps_per_pair: u64,
}

impl Default for SyntheticQuadratic {
    fn default() -> Self {
        Self { steps_per_pair: 4 }
    }
}

impl EstimatorPlugin for SyntheticQuadratic {
    fn name(&self) -> &str {
        "synthetic_quadratic"
    }

    fn contributions(
        &self,
        bag: &Dataset,
        _stream: &RngStream,
    ) -> Result<Contribution, PluginError> {
        let m = bag.n() as u64;
        spin(m * m * self.steps_per_pair);
        Ok(Contribution::new(bag.outcomes().to_vec())?)
    }
}

/// Deterministic plugin whose fit cost ignores the bag size.
pub struct SyntheticConstant {
    pub steps: u64,
}

impl EstimatorPlugin for SyntheticConstant {
    fn name(&self) -> &str {
        "synthetic_constant"
    }

    fn contributions(
        &self,
        bag: &Dataset,
        _stream: &RngStream,
    ) -> Result<Contribution, PluginError> {
        spin(self.steps);
        Ok(Contribution::new(bag.outcomes().to_vec())?)
    }
}
