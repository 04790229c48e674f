//! CSV output for the three commands. Floats are written with 17 significant
//! digits so reruns can be compared byte for byte; rows with non-finite
//! values are refused rather than silently written.

use cblb_core::timing::TimingRecord;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("column {column} would hold the non-finite value {value}")]
    NonFinite { column: &'static str, value: f64 },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// 17 significant digits, enough to round-trip any f64.
pub fn fmt_float(column: &'static str, x: f64) -> Result<String, OutputError> {
    if !x.is_finite() {
        return Err(OutputError::NonFinite { column, value: x });
    }
    Ok(format!("{x:.16e}"))
}

pub struct CoverageRow {
    pub replication: usize,
    pub estimator: String,
    pub s: usize,
    pub b: usize,
    pub n: usize,
    pub lower: f64,
    pub upper: f64,
    pub point: f64,
    pub covered: bool,
    pub truth: f64,
    pub seconds: f64,
}

pub fn write_coverage(path: &Path, rows: &[CoverageRow]) -> Result<(), OutputError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "replication",
        "estimator",
        "s",
        "b",
        "n",
        "lower",
        "upper",
        "point",
        "covered",
        "truth",
        "seconds",
    ])?;
    for row in rows {
        w.write_record([
            row.replication.to_string(),
            row.estimator.clone(),
            row.s.to_string(),
            row.b.to_string(),
            row.n.to_string(),
            fmt_float("lower", row.lower)?,
            fmt_float("upper", row.upper)?,
            fmt_float("point", row.point)?,
            (row.covered as u8).to_string(),
            fmt_float("truth", row.truth)?,
            fmt_float("seconds", row.seconds)?,
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub struct ZipplotRow {
    pub rank: usize,
    pub lower: f64,
    pub upper: f64,
    pub covered: bool,
}

pub fn write_zipplot(path: &Path, rows: &[ZipplotRow]) -> Result<(), OutputError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["rank", "lower", "upper", "covered"])?;
    for row in rows {
        w.write_record([
            row.rank.to_string(),
            fmt_float("lower", row.lower)?,
            fmt_float("upper", row.upper)?,
            (row.covered as u8).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// The timing schema is pinned; downstream scripts match on this header.
pub const TIMING_HEADER: &str =
    "method,estimator,n,b,s,r,repetition,fit_seconds,resample_seconds,total_seconds";

/// `estimator_label` is the configuration vocabulary name, which the
/// criterion estimator spells differently from its plugin.
pub fn write_timing(
    path: &Path,
    records: &[TimingRecord],
    estimator_label: &str,
) -> Result<(), OutputError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TIMING_HEADER.split(','))?;
    for rec in records {
        w.write_record([
            rec.method.to_string(),
            estimator_label.to_string(),
            rec.n.to_string(),
            rec.b.to_string(),
            rec.s.to_string(),
            rec.r.to_string(),
            rec.repetition.to_string(),
            fmt_float("fit_seconds", rec.fit_seconds)?,
            fmt_float("resample_seconds", rec.resample_seconds)?,
            fmt_float("total_seconds", rec.total_seconds)?,
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub struct AnalysisRow {
    pub estimator: String,
    pub n_used: usize,
    pub n_dropped: usize,
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub se: f64,
    pub seconds: f64,
}

pub fn write_analysis(path: &Path, row: &AnalysisRow) -> Result<(), OutputError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "estimator",
        "n_used",
        "n_dropped",
        "point",
        "lower",
        "upper",
        "se",
        "seconds",
    ])?;
    w.write_record([
        row.estimator.clone(),
        row.n_used.to_string(),
        row.n_dropped.to_string(),
        fmt_float("point", row.point)?,
        fmt_float("lower", row.lower)?,
        fmt_float("upper", row.upper)?,
        fmt_float("se", row.se)?,
        fmt_float("seconds", row.seconds)?,
    ])?;
    w.flush()?;
    Ok(())
}
