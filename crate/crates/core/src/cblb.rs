//! The bag-of-little-bootstraps driver: partition into disjoint bags, fit a
//! pluggable estimator once per bag, reweight per-unit contributions with
//! multinomial counts instead of refitting, and average per-bag percentile
//! intervals. The full-sample no-refit bootstrap is the s = 1, b = n special
//! case of the same code path.

use crate::aol::{aol_loss_pipeline, aol_value_pipeline, AOLConfig};
use crate::data::{
    BagInterval, CBLBConfig, ConfigError, Contribution, DataError, Dataset, IntervalResult,
};
use crate::dml::{dml_contributions, DMLConfig};
use crate::minimax::{minimax_contributions, MinimaxConfig};
use crate::numerics::{multinomial_draw, normal_cdf, RngStream};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use std::time::Instant;
use thiserror::Error;

/// Errors surfaced by a bag-level estimator.
pub type PluginError = Box<dyn std::error::Error + Send + Sync + 'static>;

/// A fit-and-contribute procedure: given one bag and a dedicated stream,
/// return one contribution per bag unit. Implementations must be
/// deterministic in (bag, stream) and must not look outside the bag.
pub trait EstimatorPlugin: Sync {
    fn name(&self) -> &str;
    fn contributions(&self, bag: &Dataset, stream: &RngStream)
        -> Result<Contribution, PluginError>;
}

#[derive(Debug, Error)]
pub enum CblbError {
    #[error("{s} bags of size {b} need {} indices, dataset has {n}", s * b)]
    ConfigInfeasible { n: usize, b: usize, s: usize },
    #[error("replicate counts sum to {got}, expected {expected}")]
    CountSumMismatch { expected: u64, got: u64 },
    #[error("estimator '{name}' failed on bag {bag}: {source}")]
    BagFailed {
        name: String,
        bag: usize,
        #[source]
        source: PluginError,
    },
    #[error("bag {bag} has zero contribution variance")]
    ZeroVariance { bag: usize },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Replicate values and the per-bag ingredients behind them.
#[derive(Clone, Debug)]
pub struct ReplicateSet {
    /// s x r matrix of reweighted estimates, bag k in row k.
    pub values: DMatrix<f64>,
    /// Plain contribution means per bag.
    pub bag_estimates: Vec<f64>,
    /// Contributions per bag, retained for variance and range diagnostics.
    pub bag_contributions: Vec<Contribution>,
}

/// Uniformly permutes 0..n and chunks the first s*b indices into s disjoint
/// bags of size b; the remaining n - s*b indices are unused.
pub fn partition(
    stream: &RngStream,
    n: usize,
    b: usize,
    s: usize,
) -> Result<Vec<Vec<usize>>, CblbError> {
    if b == 0 || s == 0 || s * b > n {
        return Err(CblbError::ConfigInfeasible { n, b, s });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream.rng());
    Ok(order[..s * b].chunks(b).map(<[usize]>::to_vec).collect())
}

/// The reweighted estimate (1/n) sum_a counts[a] * theta_a.
pub fn replicate(contributions: &Contribution, counts: &[u64], n: usize) -> Result<f64, CblbError> {
    assert!(
        counts.len() == contributions.len(),
        "one count per contribution"
    );
    let total: u64 = counts.iter().sum();
    if total != n as u64 {
        return Err(CblbError::CountSumMismatch {
            expected: n as u64,
            got: total,
        });
    }
    let theta = contributions.values();
    let dot: f64 = counts.iter().zip(theta).map(|(&m, &t)| m as f64 * t).sum();
    Ok(dot / n as f64)
}

/// Empirical interval from the order statistics at ceil(q*r), 1-based
/// (the inverse-CDF convention).
pub fn percentile_interval(replicates: &[f64], alpha: f64) -> (f64, f64) {
    assert!(!replicates.is_empty(), "no replicates to summarize");
    assert!(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
    let r = replicates.len();
    let mut sorted = replicates.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite replicates"));
    let pick = |q: f64| {
        let rank = (q * r as f64).ceil() as usize;
        sorted[rank.clamp(1, r) - 1]
    };
    (pick(alpha / 2.0), pick(1.0 - alpha / 2.0))
}

struct BagOutcome {
    interval: BagInterval,
    replicates: Vec<f64>,
    contributions: Contribution,
    fit_seconds: f64,
    resample_seconds: f64,
}

/// Wall time spent in each phase, summed over bags. Under parallel bags the
/// sums behave like CPU time and can exceed the elapsed wall time.
#[derive(Clone, Copy, Debug, Default)]
pub struct PhaseTimes {
    pub fit_seconds: f64,
    pub resample_seconds: f64,
}

/// Runs Algorithm 1: one estimator fit per bag, r multinomial reweightings
/// per bag, per-bag percentile intervals averaged across bags. Substreams
/// are derived per bag and per replicate from cfg.seed, so results are
/// bit-identical for any worker count.
pub fn run_cblb(
    d: &Dataset,
    plugin: &dyn EstimatorPlugin,
    cfg: &CBLBConfig,
) -> Result<(IntervalResult, ReplicateSet), CblbError> {
    let (result, replicates, _) = run_cblb_timed(d, plugin, cfg)?;
    Ok((result, replicates))
}

/// run_cblb plus per-phase wall times for the benchmarking harness.
pub fn run_cblb_timed(
    d: &Dataset,
    plugin: &dyn EstimatorPlugin,
    cfg: &CBLBConfig,
) -> Result<(IntervalResult, ReplicateSet, PhaseTimes), CblbError> {
    assert!(
        cfg.n_total == d.n(),
        "configuration was built for n = {}, dataset has n = {}",
        cfg.n_total,
        d.n()
    );
    let start = Instant::now();
    let root = RngStream::new(cfg.seed, 0);
    let bags = partition(&root.substream(&[0]), d.n(), cfg.bag_size, cfg.n_bags)?;
    let n = d.n();
    let r = cfg.n_replicates;

    let results: Vec<Result<BagOutcome, CblbError>> =
        bags.par_iter()
            .enumerate()
            .map(|(k, indices)| {
                let bag = d.select(indices);
                let fit_stream = root.substream(&[1, k as u64]);
                let fit_start = Instant::now();
                let contributions = plugin.contributions(&bag, &fit_stream).map_err(|source| {
                    CblbError::BagFailed {
                        name: plugin.name().to_string(),
                        bag: k,
                        source,
                    }
                })?;
                let fit_seconds = fit_start.elapsed().as_secs_f64();
                let resample_start = Instant::now();
                let mut replicates = Vec::with_capacity(r);
                for l in 0..r {
                    let counts = multinomial_draw(
                        &root.substream(&[2, k as u64, l as u64]),
                        n as u64,
                        cfg.bag_size,
                    );
                    replicates.push(replicate(&contributions, &counts, n)?);
                }
                let resample_seconds = resample_start.elapsed().as_secs_f64();
                let (lower, upper) = percentile_interval(&replicates, cfg.alpha);
                let mean_rep = replicates.iter().sum::<f64>() / r as f64;
                let var_rep = replicates
                    .iter()
                    .map(|x| (x - mean_rep).powi(2))
                    .sum::<f64>()
                    / (r as f64 - 1.0);
                Ok(BagOutcome {
                    interval: BagInterval {
                        estimate: contributions.mean(),
                        lower,
                        upper,
                        replicate_sd: var_rep.sqrt(),
                    },
                    replicates,
                    contributions,
                    fit_seconds,
                    resample_seconds,
                })
            })
            .collect();

    let s = cfg.n_bags;
    let mut per_bag = Vec::with_capacity(s);
    let mut values = DMatrix::zeros(s, r);
    let mut bag_estimates = Vec::with_capacity(s);
    let mut bag_contributions = Vec::with_capacity(s);
    let mut phases = PhaseTimes::default();
    for (k, outcome) in results.into_iter().enumerate() {
        let outcome = outcome?;
        for (l, &v) in outcome.replicates.iter().enumerate() {
            values[(k, l)] = v;
        }
        bag_estimates.push(outcome.interval.estimate);
        bag_contributions.push(outcome.contributions);
        per_bag.push(outcome.interval);
        phases.fit_seconds += outcome.fit_seconds;
        phases.resample_seconds += outcome.resample_seconds;
    }

    let mean = |f: &dyn Fn(&BagInterval) -> f64| per_bag.iter().map(f).sum::<f64>() / s as f64;
    let result = IntervalResult {
        point_estimate: mean(&|b| b.estimate),
        lower: mean(&|b| b.lower),
        upper: mean(&|b| b.upper),
        se: mean(&|b| b.replicate_sd),
        per_bag,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    };
    let replicate_set = ReplicateSet {
        values,
        bag_estimates,
        bag_contributions,
    };
    Ok((result, replicate_set, phases))
}

/// The no-refit full-sample bootstrap: one fit on all n units, multinomial
/// reweighting of its contributions. Definitionally run_cblb at s = 1, b = n.
pub fn run_full_bootstrap(
    d: &Dataset,
    plugin: &dyn EstimatorPlugin,
    r: usize,
    alpha: f64,
    seed: u64,
) -> Result<(IntervalResult, ReplicateSet), CblbError> {
    let cfg = CBLBConfig::from_bag_size(d.n(), d.n(), Some(1), r, alpha, seed)?;
    run_cblb(d, plugin, &cfg)
}

/// Kolmogorov-Smirnov diagnostic for one bag's replicate distribution.
#[derive(Clone, Copy, Debug)]
pub struct NormalityRecord {
    pub ks_distance: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Standardizes bag k's replicates by sqrt(n)/sigma_k, where sigma_k^2 is
/// the variance of the bag's contributions under the bag empirical measure,
/// and compares against the standard normal at threshold 1.63/sqrt(r).
pub fn normality_check(
    rep: &ReplicateSet,
    k: usize,
    n: usize,
) -> Result<NormalityRecord, CblbError> {
    let theta = rep.bag_contributions[k].values();
    let b = theta.len() as f64;
    let mean = rep.bag_contributions[k].mean();
    let sigma2 = theta.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / b;
    if sigma2 <= 0.0 {
        return Err(CblbError::ZeroVariance { bag: k });
    }
    let sigma = sigma2.sqrt();
    let r = rep.values.ncols();
    let scale = (n as f64).sqrt() / sigma;
    let mut z: Vec<f64> = (0..r)
        .map(|l| scale * (rep.values[(k, l)] - rep.bag_estimates[k]))
        .collect();
    z.sort_by(|a, b| a.partial_cmp(b).expect("finite replicates"));
    let mut ks_distance: f64 = 0.0;
    for (i, &zi) in z.iter().enumerate() {
        let phi = normal_cdf(zi);
        let above = (i + 1) as f64 / r as f64 - phi;
        let below = phi - i as f64 / r as f64;
        ks_distance = ks_distance.max(above).max(below);
    }
    let threshold = 1.63 / (r as f64).sqrt();
    Ok(NormalityRecord {
        ks_distance,
        threshold,
        pass: ks_distance <= threshold,
    })
}

/// Kernel minimax weighting as a bag plugin.
pub struct MinimaxPlugin {
    pub config: MinimaxConfig,
}

impl EstimatorPlugin for MinimaxPlugin {
    fn name(&self) -> &str {
        "minimax"
    }

    fn contributions(
        &self,
        bag: &Dataset,
        _stream: &RngStream,
    ) -> Result<Contribution, PluginError> {
        Ok(minimax_contributions(bag, &self.config)?)
    }
}

/// Cross-fitted DML as a bag plugin; the stream drives fold assignment.
pub struct DmlPlugin {
    pub config: DMLConfig,
}

impl EstimatorPlugin for DmlPlugin {
    fn name(&self) -> &str {
        "dml"
    }

    fn contributions(
        &self,
        bag: &Dataset,
        stream: &RngStream,
    ) -> Result<Contribution, PluginError> {
        Ok(dml_contributions(bag, &self.config, stream)?)
    }
}

/// Policy-value contributions from the AOL fit as a bag plugin.
pub struct AolValuePlugin {
    pub config: AOLConfig,
}

impl EstimatorPlugin for AolValuePlugin {
    fn name(&self) -> &str {
        "aol_value"
    }

    fn contributions(
        &self,
        bag: &Dataset,
        stream: &RngStream,
    ) -> Result<Contribution, PluginError> {
        Ok(aol_value_pipeline(bag, &self.config, stream)?)
    }
}

/// Weighted surrogate-loss contributions from the AOL fit as a bag plugin.
pub struct AolLossPlugin {
    pub config: AOLConfig,
}

impl EstimatorPlugin for AolLossPlugin {
    fn name(&self) -> &str {
        "aol_loss"
    }

    fn contributions(
        &self,
        bag: &Dataset,
        stream: &RngStream,
    ) -> Result<Contribution, PluginError> {
        Ok(aol_loss_pipeline(bag, &self.config, stream)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TreatmentCoding;
    use crate::dgp::{generate_ate, DEFAULT_TAU};
    use crate::kernels::KernelSpec;
    use rand_distr::{Distribution, StandardNormal};

    /// Echoes the bag outcomes as contributions.
    struct IdentityPlugin;

    impl EstimatorPlugin for IdentityPlugin {
        fn name(&self) -> &str {
            "identity"
        }

        fn contributions(
            &self,
            bag: &Dataset,
            _stream: &RngStream,
        ) -> Result<Contribution, PluginError> {
            Ok(Contribution::new(bag.outcomes().to_vec())?)
        }
    }

    /// Fails whenever the bag contains a negative outcome.
    struct FussyPlugin;

    impl EstimatorPlugin for FussyPlugin {
        fn name(&self) -> &str {
            "fussy"
        }

        fn contributions(
            &self,
            bag: &Dataset,
            _stream: &RngStream,
        ) -> Result<Contribution, PluginError> {
            if bag.outcomes().iter().any(|&y| y < 0.0) {
                return Err("negative outcome in bag".into());
            }
            Ok(Contribution::new(bag.outcomes().to_vec())?)
        }
    }

    fn toy_dataset(outcomes: Vec<f64>) -> Dataset {
        let n = outcomes.len();
        let x = DMatrix::from_fn(n, 1, |i, _| i as f64);
        let w: Vec<i8> = (0..n).map(|i| (i % 2 == 0) as i8).collect();
        Dataset::new(outcomes, w, x, TreatmentCoding::ZeroOne).unwrap()
    }

    #[test]
    fn partition_produces_disjoint_blocks() {
        let blocks = partition(&RngStream::new(11, 0), 10, 3, 3).unwrap();
        assert_eq!(blocks.len(), 3);
        let mut seen: Vec<usize> = blocks.iter().flatten().copied().collect();
        assert_eq!(seen.len(), 9, "one index must stay unused");
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 9, "blocks must be disjoint");
    }

    #[test]
    fn partition_covers_exactly_when_divisible() {
        let blocks = partition(&RngStream::new(12, 0), 12, 3, 4).unwrap();
        let mut seen: Vec<usize> = blocks.iter().flatten().copied().collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn partition_is_uniform_over_draws() {
        let mut hits = 0;
        for t in 0..1000 {
            let blocks = partition(&RngStream::new(13, t), 10, 3, 3).unwrap();
            if blocks[0].contains(&0) {
                hits += 1;
            }
        }
        let freq = hits as f64 / 1000.0;
        let sd = (0.3 * 0.7 / 1000.0f64).sqrt();
        assert!(
            (freq - 0.3).abs() <= 3.0 * sd,
            "index 0 landed in block 0 with frequency {freq}"
        );
    }

    #[test]
    fn partition_rejects_infeasible_requests() {
        let err = partition(&RngStream::new(14, 0), 10, 4, 3).unwrap_err();
        assert!(matches!(
            err,
            CblbError::ConfigInfeasible { n: 10, b: 4, s: 3 }
        ));
    }

    #[test]
    fn replicate_with_uniform_counts_is_the_bag_mean() {
        let c = Contribution::new(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let v = replicate(&c, &[25, 25, 25, 25], 100).unwrap();
        assert_eq!(v, 2.5);
        let single = Contribution::new(vec![7.5]).unwrap();
        assert_eq!(replicate(&single, &[100], 100).unwrap(), 7.5);
    }

    #[test]
    fn replicate_rejects_wrong_totals() {
        let c = Contribution::new(vec![1.0, 2.0]).unwrap();
        let err = replicate(&c, &[30, 40], 100).unwrap_err();
        assert!(matches!(
            err,
            CblbError::CountSumMismatch {
                expected: 100,
                got: 70
            }
        ));
    }

    #[test]
    fn replicate_variance_matches_the_multinomial_formula() {
        let stream = RngStream::new(15, 0);
        let mut rng = stream.rng();
        let b = 50;
        let n = 1000usize;
        let theta: Vec<f64> = (0..b)
            .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect();
        let c = Contribution::new(theta.clone()).unwrap();
        let r = 10_000;
        let reps: Vec<f64> = (0..r)
            .map(|l| {
                let counts = multinomial_draw(&stream.substream(&[l]), n as u64, b);
                replicate(&c, &counts, n).unwrap()
            })
            .collect();
        let mean = reps.iter().sum::<f64>() / r as f64;
        let var = reps.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (r as f64 - 1.0);
        let tm = theta.iter().sum::<f64>() / b as f64;
        let sigma_b2 = theta.iter().map(|t| (t - tm).powi(2)).sum::<f64>() / b as f64;
        let exact = sigma_b2 / n as f64;
        assert!(
            (var - exact).abs() / exact <= 0.10,
            "replicate variance {var} vs closed form {exact}"
        );
    }

    #[test]
    fn constant_contributions_give_a_degenerate_interval() {
        let d = toy_dataset(vec![2.5; 60]);
        let cfg = CBLBConfig::from_bag_size(60, 10, None, 50, 0.05, 16).unwrap();
        let (res, _) = run_cblb(&d, &IdentityPlugin, &cfg).unwrap();
        assert_eq!(res.point_estimate, 2.5);
        assert_eq!((res.lower, res.upper), (2.5, 2.5));
        assert_eq!(res.se, 0.0);
    }

    #[test]
    fn binomial_bag_matches_the_exact_quantiles() {
        let c = Contribution::new(vec![0.0, 1.0]).unwrap();
        let stream = RngStream::new(17, 0);
        let reps: Vec<f64> = (0..10_000)
            .map(|l| {
                let counts = multinomial_draw(&stream.substream(&[l]), 100, 2);
                replicate(&c, &counts, 100).unwrap()
            })
            .collect();
        let (lo, hi) = percentile_interval(&reps, 0.05);
        assert!(
            (lo - 0.40).abs() <= 0.015,
            "lower quantile {lo}, binomial oracle 0.40"
        );
        assert!(
            (hi - 0.60).abs() <= 0.015,
            "upper quantile {hi}, binomial oracle 0.60"
        );
    }

    #[test]
    fn replicates_stay_inside_the_contribution_range_and_center_correctly() {
        let stream = RngStream::new(18, 0);
        let mut rng = stream.rng();
        let outcomes: Vec<f64> = (0..1000)
            .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect();
        let d = toy_dataset(outcomes);
        let cfg = CBLBConfig::from_bag_size(1000, 100, Some(1), 10_000, 0.05, 18).unwrap();
        let (_, rep) = run_cblb(&d, &IdentityPlugin, &cfg).unwrap();
        let theta = rep.bag_contributions[0].values();
        let min = theta.iter().copied().fold(f64::INFINITY, f64::min);
        let max = theta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let r = rep.values.ncols();
        for l in 0..r {
            let v = rep.values[(0, l)];
            assert!(
                v >= min && v <= max,
                "replicate {l} = {v} left [{min}, {max}]"
            );
        }
        let mean = rep.bag_contributions[0].mean();
        let sigma2 = theta.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / theta.len() as f64;
        let rep_mean = (0..r).map(|l| rep.values[(0, l)]).sum::<f64>() / r as f64;
        let tol = 3.0 * sigma2.sqrt() / (1000.0 * r as f64).sqrt();
        assert!(
            (rep_mean - rep.bag_estimates[0]).abs() <= tol,
            "replicate mean {rep_mean} drifted from {}",
            rep.bag_estimates[0]
        );
        let rep_var = (0..r)
            .map(|l| (rep.values[(0, l)] - rep_mean).powi(2))
            .sum::<f64>()
            / (r as f64 - 1.0);
        let exact = sigma2 / 1000.0;
        assert!(
            (rep_var - exact).abs() / exact <= 0.10,
            "conditional variance {rep_var} vs {exact}"
        );
    }

    #[test]
    fn adding_a_constant_shifts_both_endpoints() {
        let stream = RngStream::new(19, 0);
        let mut rng = stream.rng();
        let outcomes: Vec<f64> = (0..90)
            .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect();
        let shifted: Vec<f64> = outcomes.iter().map(|y| y + 1.75).collect();
        let cfg = CBLBConfig::from_bag_size(90, 15, None, 200, 0.05, 19).unwrap();
        let (base, _) = run_cblb(&toy_dataset(outcomes), &IdentityPlugin, &cfg).unwrap();
        let (moved, _) = run_cblb(&toy_dataset(shifted), &IdentityPlugin, &cfg).unwrap();
        assert!((moved.lower - base.lower - 1.75).abs() <= 1e-9);
        assert!((moved.upper - base.upper - 1.75).abs() <= 1e-9);
    }

    #[test]
    fn results_do_not_depend_on_the_worker_count() {
        let stream = RngStream::new(20, 0);
        let mut rng = stream.rng();
        let outcomes: Vec<f64> = (0..120)
            .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect();
        let d = toy_dataset(outcomes);
        let cfg = CBLBConfig::from_bag_size(120, 20, None, 100, 0.05, 20).unwrap();
        let runs: Vec<(IntervalResult, ReplicateSet)> = [1usize, 2]
            .iter()
            .map(|&threads| {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build()
                    .unwrap()
                    .install(|| run_cblb(&d, &IdentityPlugin, &cfg).unwrap())
            })
            .collect();
        let (a, ra) = &runs[0];
        let (b, rb) = &runs[1];
        assert_eq!(a.point_estimate.to_bits(), b.point_estimate.to_bits());
        assert_eq!(a.lower.to_bits(), b.lower.to_bits());
        assert_eq!(a.upper.to_bits(), b.upper.to_bits());
        assert_eq!(a.se.to_bits(), b.se.to_bits());
        assert_eq!(ra.values.len(), rb.values.len());
        for (x, y) in ra.values.iter().zip(rb.values.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn failing_bags_abort_with_their_index() {
        let mut outcomes: Vec<f64> = (0..30).map(|i| 1.0 + i as f64).collect();
        outcomes[7] = -5.0;
        let d = toy_dataset(outcomes);
        let cfg = CBLBConfig::from_bag_size(30, 5, None, 10, 0.05, 21).unwrap();
        // Reproduce the internal partition to learn which bag holds unit 7.
        let root = RngStream::new(21, 0);
        let blocks = partition(&root.substream(&[0]), 30, 5, 6).unwrap();
        let expected = blocks.iter().position(|blk| blk.contains(&7)).unwrap();
        match run_cblb(&d, &FussyPlugin, &cfg) {
            Err(CblbError::BagFailed { name, bag, .. }) => {
                assert_eq!(name, "fussy");
                assert_eq!(bag, expected, "error must name the failing bag");
            }
            other => panic!("expected a bag failure, got {other:?}"),
        }
    }

    #[test]
    fn full_bootstrap_is_the_single_bag_special_case() {
        let stream = RngStream::new(22, 0);
        let mut rng = stream.rng();
        let outcomes: Vec<f64> = (0..80)
            .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect();
        let d = toy_dataset(outcomes);
        let (full, rep_full) = run_full_bootstrap(&d, &IdentityPlugin, 150, 0.05, 22).unwrap();
        let cfg = CBLBConfig::from_bag_size(80, 80, Some(1), 150, 0.05, 22).unwrap();
        let (manual, rep_manual) = run_cblb(&d, &IdentityPlugin, &cfg).unwrap();
        assert_eq!(full.lower.to_bits(), manual.lower.to_bits());
        assert_eq!(full.upper.to_bits(), manual.upper.to_bits());
        assert_eq!(
            full.point_estimate.to_bits(),
            manual.point_estimate.to_bits()
        );
        for (x, y) in rep_full.values.iter().zip(rep_manual.values.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        let (constant, _) =
            run_full_bootstrap(&toy_dataset(vec![3.0; 40]), &IdentityPlugin, 100, 0.05, 23)
                .unwrap();
        assert_eq!(constant.lower, constant.upper);
    }

    fn acceptance_minimax() -> MinimaxPlugin {
        let kernel = KernelSpec::gaussian(3.0, 0.01).unwrap();
        MinimaxPlugin {
            config: MinimaxConfig::new(kernel, kernel, 1.0)
                .unwrap()
                .with_sigma2(0.01),
        }
    }

    #[test]
    fn full_bootstrap_width_tracks_the_bagged_width() {
        let sample = generate_ate(&RngStream::new(24, 0), 2000, DEFAULT_TAU);
        let plugin = acceptance_minimax();
        let cfg = CBLBConfig::from_gamma_exponent(2000, 0.7, None, 100, 0.05, 24).unwrap();
        let (bagged, _) = run_cblb(&sample.dataset, &plugin, &cfg).unwrap();
        let (full, _) = run_full_bootstrap(&sample.dataset, &plugin, 100, 0.05, 25).unwrap();
        let wb = bagged.upper - bagged.lower;
        let wf = full.upper - full.lower;
        assert!(wb > 0.0 && wf > 0.0);
        assert!(
            (wf - wb).abs() <= 0.25 * wb,
            "full width {wf} vs bagged width {wb} disagree beyond 25%"
        );
    }

    #[test]
    fn normal_contributions_pass_the_normality_check() {
        let stream = RngStream::new(26, 0);
        let mut rng = stream.rng();
        let b = 500;
        let n = 100_000usize;
        let theta: Vec<f64> = (0..b)
            .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect();
        let c = Contribution::new(theta).unwrap();
        let r = 5000;
        let mut values = DMatrix::zeros(1, r);
        for l in 0..r {
            let counts = multinomial_draw(&stream.substream(&[l as u64]), n as u64, b);
            values[(0, l)] = replicate(&c, &counts, n).unwrap();
        }
        let rep = ReplicateSet {
            values,
            bag_estimates: vec![c.mean()],
            bag_contributions: vec![c],
        };
        let record = normality_check(&rep, 0, n).unwrap();
        assert!(
            record.pass,
            "KS distance {} above threshold {}",
            record.ks_distance, record.threshold
        );
    }

    #[test]
    fn tiny_bags_with_a_spike_fail_the_normality_check() {
        // b = 10 with one extreme contribution puts the replicate law on a
        // visibly discrete grid, outside the b -> infinity regime.
        let mut theta = vec![0.0; 10];
        theta[0] = 1000.0;
        let c = Contribution::new(theta).unwrap();
        let stream = RngStream::new(27, 0);
        let n = 100usize;
        let r = 5000;
        let mut values = DMatrix::zeros(1, r);
        for l in 0..r {
            let counts = multinomial_draw(&stream.substream(&[l as u64]), n as u64, 10);
            values[(0, l)] = replicate(&c, &counts, n).unwrap();
        }
        let rep = ReplicateSet {
            values,
            bag_estimates: vec![c.mean()],
            bag_contributions: vec![c],
        };
        let record = normality_check(&rep, 0, n).unwrap();
        assert!(
            !record.pass,
            "expected a KS failure, got distance {}",
            record.ks_distance
        );
    }

    #[test]
    fn constant_contributions_trip_zero_variance() {
        let c = Contribution::new(vec![4.0; 20]).unwrap();
        let rep = ReplicateSet {
            values: DMatrix::zeros(1, 10),
            bag_estimates: vec![4.0],
            bag_contributions: vec![c],
        };
        let err = normality_check(&rep, 0, 100).unwrap_err();
        assert!(matches!(err, CblbError::ZeroVariance { bag: 0 }));
    }

    #[test]
    fn minimax_bags_cover_the_effect() {
        let mut covered = 0;
        let plugin = acceptance_minimax();
        for outer in 0..100 {
            let sample = generate_ate(&RngStream::new(4242, outer), 4000, DEFAULT_TAU);
            let cfg =
                CBLBConfig::from_gamma_exponent(4000, 0.7, None, 100, 0.05, 9000 + outer).unwrap();
            let (res, _) = run_cblb(&sample.dataset, &plugin, &cfg).unwrap();
            if res.lower <= DEFAULT_TAU && DEFAULT_TAU <= res.upper {
                covered += 1;
            }
        }
        assert!(
            (88..=100).contains(&covered),
            "covered {covered}/100, outside the binomial(100, 0.95) band"
        );
    }
}
