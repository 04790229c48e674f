//! CSV ingestion for the analyze command: header-mapped columns, range
//! filters, one-hot encoding with declared reference levels, and row-precise
//! parse errors.

use crate::config::{ColumnMapping, RowFilter};
use cblb_core::data::{DataError, Dataset, TreatmentCoding};
use nalgebra::DMatrix;
use std::collections::BTreeSet;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("column {column} is not in the CSV header")]
    MissingColumn { column: String },
    #[error("row {row}: column {column} holds unparseable value {value:?}")]
    UnparseableRow {
        row: usize,
        column: String,
        value: String,
    },
    #[error("no rows remain after filtering")]
    EmptyAfterFilter,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// The analysis sample together with drop accounting and the design column
/// names in encoding order.
#[derive(Debug)]
pub struct IngestResult {
    pub dataset: Dataset,
    pub n_used: usize,
    pub n_dropped: usize,
    pub feature_names: Vec<String>,
}

fn header_index(header: &csv::StringRecord, column: &str) -> Result<usize, IngestError> {
    header
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| IngestError::MissingColumn {
            column: column.to_string(),
        })
}

fn parse_finite(row: usize, column: &str, value: &str) -> Result<f64, IngestError> {
    match value.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(IngestError::UnparseableRow {
            row,
            column: column.to_string(),
            value: value.to_string(),
        }),
    }
}

struct KeptRow {
    outcome: f64,
    treatment: i8,
    numeric: Vec<f64>,
    categorical: Vec<String>,
}

/// Reads the CSV and builds a {0,1}-coded dataset.
///
/// Row handling, in order: filter columns are checked first (an empty filter
/// field or an out-of-range value drops the row), then any empty mapped field
/// drops the row, then parse failures in non-empty mapped fields abort with
/// the row number. Data rows are numbered from 1, directly below the header.
pub fn ingest_csv(
    path: &Path,
    mapping: &ColumnMapping,
    filters: &[RowFilter],
) -> Result<IngestResult, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header = reader.headers()?.clone();

    let outcome_idx = header_index(&header, &mapping.outcome)?;
    let treatment_idx = header_index(&header, &mapping.treatment)?;
    let numeric_idx = mapping
        .numeric
        .iter()
        .map(|c| header_index(&header, c))
        .collect::<Result<Vec<_>, _>>()?;
    let categorical_idx = mapping
        .categorical
        .iter()
        .map(|c| header_index(&header, &c.column))
        .collect::<Result<Vec<_>, _>>()?;
    let filter_idx = filters
        .iter()
        .map(|f| header_index(&header, &f.column))
        .collect::<Result<Vec<_>, _>>()?;

    let mut kept = Vec::new();
    let mut n_dropped = 0usize;
    'rows: for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 1;

        for (filter, &idx) in filters.iter().zip(&filter_idx) {
            let raw = record.get(idx).unwrap_or("");
            if raw.is_empty() {
                n_dropped += 1;
                continue 'rows;
            }
            let v = parse_finite(row, &filter.column, raw)?;
            if filter.min.is_some_and(|m| v < m) || filter.max.is_some_and(|m| v > m) {
                n_dropped += 1;
                continue 'rows;
            }
        }

        let mapped = std::iter::once(outcome_idx)
            .chain(std::iter::once(treatment_idx))
            .chain(numeric_idx.iter().copied())
            .chain(categorical_idx.iter().copied());
        for idx in mapped {
            if record.get(idx).unwrap_or("").is_empty() {
                n_dropped += 1;
                continue 'rows;
            }
        }

        let outcome = parse_finite(row, &mapping.outcome, &record[outcome_idx])?;
        let raw_treatment = &record[treatment_idx];
        let code = raw_treatment.parse::<f64>().ok();
        let treatment = if code == Some(0.0) {
            0i8
        } else if code == Some(1.0) {
            1i8
        } else {
            return Err(IngestError::UnparseableRow {
                row,
                column: mapping.treatment.clone(),
                value: raw_treatment.to_string(),
            });
        };
        let numeric = mapping
            .numeric
            .iter()
            .zip(&numeric_idx)
            .map(|(c, &idx)| parse_finite(row, c, &record[idx]))
            .collect::<Result<Vec<_>, _>>()?;
        let categorical = categorical_idx
            .iter()
            .map(|&idx| record[idx].to_string())
            .collect();
        kept.push(KeptRow {
            outcome,
            treatment,
            numeric,
            categorical,
        });
    }

    if kept.is_empty() {
        return Err(IngestError::EmptyAfterFilter);
    }

    // Dummy levels are the sorted distinct values among kept rows, minus the
    // declared reference level.
    let mut level_sets: Vec<BTreeSet<&str>> = vec![BTreeSet::new(); mapping.categorical.len()];
    for row in &kept {
        for (set, value) in level_sets.iter_mut().zip(&row.categorical) {
            set.insert(value.as_str());
        }
    }
    let levels: Vec<Vec<String>> = level_sets
        .iter()
        .zip(&mapping.categorical)
        .map(|(set, spec)| {
            set.iter()
                .filter(|&&v| v != spec.reference)
                .map(|v| v.to_string())
                .collect()
        })
        .collect();

    let mut feature_names: Vec<String> = mapping.numeric.clone();
    for (spec, lv) in mapping.categorical.iter().zip(&levels) {
        for level in lv {
            feature_names.push(format!("{}={}", spec.column, level));
        }
    }

    let n = kept.len();
    let p = feature_names.len();
    let mut covariates = DMatrix::zeros(n, p);
    for (r, row) in kept.iter().enumerate() {
        let mut c = 0;
        for &v in &row.numeric {
            covariates[(r, c)] = v;
            c += 1;
        }
        for (value, lv) in row.categorical.iter().zip(&levels) {
            for level in lv {
                covariates[(r, c)] = if value == level { 1.0 } else { 0.0 };
                c += 1;
            }
        }
    }

    let outcomes: Vec<f64> = kept.iter().map(|r| r.outcome).collect();
    let treatments: Vec<i8> = kept.iter().map(|r| r.treatment).collect();
    let dataset = Dataset::new(outcomes, treatments, covariates, TreatmentCoding::ZeroOne)?;
    Ok(IngestResult {
        dataset,
        n_used: n,
        n_dropped,
        feature_names,
    })
}
