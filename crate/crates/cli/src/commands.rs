//! The three commands behind the binary. Each writes CSV files into the
//! output directory and reports the paths it produced.
//!
//! Seed discipline: simulate draws replication rep from stream (seed, rep)
//! and resamples with seed + rep + 1; timing draws the dataset for grid size
//! n from stream (seed, n) and resamples with the configured seed; analyze
//! resamples with the configured seed. Outputs are therefore invariant to
//! the worker count; only the seconds columns change between reruns.

use crate::config::{CommandKind, DgpKind, EstimatorKind, RunConfig, MAX_BAG_SIZE};
use crate::ingest::ingest_csv;
use crate::output::{
    write_analysis, write_coverage, write_timing, write_zipplot, AnalysisRow, CoverageRow,
    ZipplotRow,
};
use cblb_core::cblb::{
    run_cblb, AolLossPlugin, AolValuePlugin, DmlPlugin, EstimatorPlugin, MinimaxPlugin,
};
use cblb_core::data::{Dataset, TreatmentCoding};
use cblb_core::dgp::{ate_truth, generate_ate, generate_policy, policy_truth, DEFAULT_TAU};
use cblb_core::numerics::RngStream;
use cblb_core::timing::benchmark_with_workers;
use rayon::prelude::*;
use std::cmp::Ordering;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// The run was never viable: bad JSON, bad schema, infeasible settings.
    #[error("{0}")]
    Config(String),
    /// The run started and failed: I/O, malformed data, estimator breakdown.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

fn config_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Config(e.to_string())
}

fn runtime_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

pub struct CommandOutcome {
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

fn build_plugin(cfg: &RunConfig) -> Result<Box<dyn EstimatorPlugin>, CliError> {
    Ok(match cfg.estimator {
        EstimatorKind::Minimax => Box::new(MinimaxPlugin {
            config: cfg.minimax_block().to_config().map_err(config_err)?,
        }),
        EstimatorKind::Dml => Box::new(DmlPlugin {
            config: cfg.dml_block().to_config().map_err(config_err)?,
        }),
        EstimatorKind::AolValue => Box::new(AolValuePlugin {
            config: cfg.aol_block().to_config().map_err(config_err)?,
        }),
        EstimatorKind::AolCriterion => Box::new(AolLossPlugin {
            config: cfg.aol_block().to_config().map_err(config_err)?,
        }),
    })
}

fn generate_dataset(dgp: DgpKind, stream: &RngStream, n: usize) -> Dataset {
    match dgp {
        DgpKind::Ate => generate_ate(stream, n, DEFAULT_TAU).dataset,
        DgpKind::Policy => generate_policy(stream, n),
    }
}

fn build_pool(workers: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(runtime_err)
}

fn default_workers() -> usize {
    std::thread::available_parallelism()
        .map(|p| p.get())
        .unwrap_or(1)
}

/// Dispatches on the config's command field. `workers` overrides the
/// default parallelism (all cores for simulate and analyze, one for timing
/// so the phase columns stay comparable across machines).
pub fn run(
    cfg: &RunConfig,
    workers: Option<usize>,
    output_dir: Option<&Path>,
) -> Result<CommandOutcome, CliError> {
    if workers == Some(0) {
        return Err(CliError::Config("workers must be positive".into()));
    }
    let out_dir = output_dir
        .map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir).map_err(runtime_err)?;
    match cfg.command {
        CommandKind::Simulate => {
            cmd_simulate(cfg, workers.unwrap_or_else(default_workers), &out_dir)
        }
        CommandKind::Timing => cmd_timing(cfg, workers.unwrap_or(1), &out_dir),
        CommandKind::Analyze => cmd_analyze(cfg, workers.unwrap_or_else(default_workers), &out_dir),
    }
}

fn cmd_simulate(
    cfg: &RunConfig,
    workers: usize,
    out_dir: &Path,
) -> Result<CommandOutcome, CliError> {
    let n = cfg.n.expect("validated");
    let reps = cfg.replications.expect("validated");
    let dgp = cfg.dgp.expect("validated");
    let plugin = build_plugin(cfg)?;
    let truth = match dgp {
        DgpKind::Ate => ate_truth(DEFAULT_TAU),
        DgpKind::Policy => policy_truth(),
    }
    .true_value;
    // Geometry is the same for every replication; check it before spawning.
    let geometry = cfg.cblb_config(n, cfg.seed).map_err(config_err)?;
    let mut warnings = Vec::new();
    if let Some(w) = geometry.quantile_warning() {
        warnings.push(w);
    }

    let pool = build_pool(workers)?;
    let estimator_label = cfg.estimator.to_string();
    let rows: Result<Vec<(CoverageRow, f64)>, CliError> = pool.install(|| {
        (0..reps)
            .into_par_iter()
            .map(|rep| {
                let data_stream = RngStream::new(cfg.seed, rep as u64);
                let d = generate_dataset(dgp, &data_stream, n);
                let run_cfg = cfg
                    .cblb_config(n, cfg.seed.wrapping_add(rep as u64 + 1))
                    .map_err(config_err)?;
                let (res, _) = run_cblb(&d, plugin.as_ref(), &run_cfg).map_err(runtime_err)?;
                let row = CoverageRow {
                    replication: rep + 1,
                    estimator: estimator_label.clone(),
                    s: run_cfg.n_bags,
                    b: run_cfg.bag_size,
                    n,
                    lower: res.lower,
                    upper: res.upper,
                    point: res.point_estimate,
                    covered: res.lower <= truth && truth <= res.upper,
                    truth,
                    seconds: res.wall_time_seconds,
                };
                Ok((row, res.se))
            })
            .collect()
    });
    let (coverage, ses): (Vec<CoverageRow>, Vec<f64>) = rows?.into_iter().unzip();

    let coverage_path = out_dir.join("coverage.csv");
    write_coverage(&coverage_path, &coverage).map_err(runtime_err)?;
    let zipplot_path = out_dir.join("zipplot.csv");
    write_zipplot(&zipplot_path, &zipplot_rows(&coverage, &ses, truth)).map_err(runtime_err)?;
    Ok(CommandOutcome {
        files: vec![coverage_path, zipplot_path],
        warnings,
    })
}

/// Zipplot order: descending |point - truth| / se, so undercovering
/// intervals cluster at the top of the plot. A degenerate row (se = 0)
/// falls back to the unscaled distance. Ties keep replication order.
fn zipplot_rows(rows: &[CoverageRow], ses: &[f64], truth: f64) -> Vec<ZipplotRow> {
    let mut scored: Vec<(f64, &CoverageRow)> = rows
        .iter()
        .zip(ses)
        .map(|(row, &se)| {
            let dist = (row.point - truth).abs();
            let score = if se > 0.0 { dist / se } else { dist };
            (score, row)
        })
        .collect();
    scored.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(Ordering::Equal)
            .then(a.1.replication.cmp(&b.1.replication))
    });
    scored
        .iter()
        .enumerate()
        .map(|(i, (_, row))| ZipplotRow {
            rank: i + 1,
            lower: row.lower,
            upper: row.upper,
            covered: row.covered,
        })
        .collect()
}

fn cmd_timing(cfg: &RunConfig, workers: usize, out_dir: &Path) -> Result<CommandOutcome, CliError> {
    let dgp = cfg.dgp.expect("validated");
    let grid: Vec<usize> = match (&cfg.n_grid, cfg.n) {
        (Some(grid), _) => grid.clone(),
        (None, Some(n)) => vec![n],
        (None, None) => unreachable!("validated"),
    };
    let reps = cfg.repetitions.unwrap_or(3);
    let plugin = build_plugin(cfg)?;

    let mut warnings = Vec::new();
    let mut records = Vec::new();
    for &n in &grid {
        if n > MAX_BAG_SIZE {
            return Err(CliError::Config(format!(
                "timing at n = {n} would fit the full bootstrap on a bag of {n} > {MAX_BAG_SIZE}"
            )));
        }
        let run_cfg = cfg.cblb_config(n, cfg.seed).map_err(config_err)?;
        if let Some(w) = run_cfg.quantile_warning() {
            warnings.push(format!("n = {n}: {w}"));
        }
        let d = generate_dataset(dgp, &RngStream::new(cfg.seed, n as u64), n);
        let recs = benchmark_with_workers(plugin.as_ref(), &d, &run_cfg, reps, workers)
            .map_err(runtime_err)?;
        records.extend(recs);
    }

    let timing_path = out_dir.join("timing.csv");
    write_timing(&timing_path, &records, &cfg.estimator.to_string()).map_err(runtime_err)?;
    Ok(CommandOutcome {
        files: vec![timing_path],
        warnings,
    })
}

fn cmd_analyze(
    cfg: &RunConfig,
    workers: usize,
    out_dir: &Path,
) -> Result<CommandOutcome, CliError> {
    let input = cfg.input_csv.as_ref().expect("validated");
    let mapping = cfg.columns.as_ref().expect("validated");
    let plugin = build_plugin(cfg)?;
    let ingest = ingest_csv(input, mapping, &cfg.filters).map_err(runtime_err)?;
    let d = match cfg.estimator {
        EstimatorKind::Minimax | EstimatorKind::Dml => ingest.dataset,
        EstimatorKind::AolValue | EstimatorKind::AolCriterion => {
            ingest.dataset.convert_coding(TreatmentCoding::PlusMinus)
        }
    };
    // Geometry depends on how many rows survived, so infeasibility here is a
    // property of the data, not the configuration.
    let run_cfg = cfg
        .cblb_config(ingest.n_used, cfg.seed)
        .map_err(runtime_err)?;
    let mut warnings = Vec::new();
    if let Some(w) = run_cfg.quantile_warning() {
        warnings.push(w);
    }

    let pool = build_pool(workers)?;
    let (res, _) = pool
        .install(|| run_cblb(&d, plugin.as_ref(), &run_cfg))
        .map_err(runtime_err)?;

    let analysis_path = out_dir.join("analysis.csv");
    write_analysis(
        &analysis_path,
        &AnalysisRow {
            estimator: cfg.estimator.to_string(),
            n_used: ingest.n_used,
            n_dropped: ingest.n_dropped,
            point: res.point_estimate,
            lower: res.lower,
            upper: res.upper,
            se: res.se,
            seconds: res.wall_time_seconds,
        },
    )
    .map_err(runtime_err)?;
    Ok(CommandOutcome {
        files: vec![analysis_path],
        warnings,
    })
}
