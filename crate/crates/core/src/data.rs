//! Shared data model: observations, per-unit contributions, resampler
//! configuration, and interval results.

use nalgebra::DMatrix;
use thiserror::Error;

/// Admitted treatment codings. ATE estimators use {0,1}; policy learning uses
/// {-1,+1} because its loss multiplies by the treatment sign.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TreatmentCoding {
    ZeroOne,
    PlusMinus,
}

impl TreatmentCoding {
    pub fn admits(&self, code: i8) -> bool {
        match self {
            TreatmentCoding::ZeroOne => code == 0 || code == 1,
            TreatmentCoding::PlusMinus => code == -1 || code == 1,
        }
    }
}

impl std::fmt::Display for TreatmentCoding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TreatmentCoding::ZeroOne => write!(f, "{{0,1}}"),
            TreatmentCoding::PlusMinus => write!(f, "{{-1,+1}}"),
        }
    }
}

/// Validation failures for observational data.
#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error(
        "array lengths disagree: {outcomes} outcomes, {treatments} treatments, \
         {covariate_rows} covariate rows"
    )]
    LengthMismatch {
        outcomes: usize,
        treatments: usize,
        covariate_rows: usize,
    },
    #[error("non-finite value in {field} at row {row}{}", column.map(|c| format!(", column {c}")).unwrap_or_default())]
    NonFiniteValue {
        field: &'static str,
        row: usize,
        column: Option<usize>,
    },
    #[error("treatment code {value} at row {row} is not admitted by coding {coding}")]
    BadTreatmentCode {
        row: usize,
        value: i8,
        coding: TreatmentCoding,
    },
    #[error("{what} must be non-empty")]
    Empty { what: &'static str },
}

/// Checks the dataset invariants under the requested coding: equal lengths,
/// finite values everywhere, and treatment codes drawn from `coding`.
pub fn validate_dataset(
    outcomes: &[f64],
    treatments: &[i8],
    covariates: &DMatrix<f64>,
    coding: TreatmentCoding,
) -> Result<(), DataError> {
    if outcomes.len() != treatments.len() || outcomes.len() != covariates.nrows() {
        return Err(DataError::LengthMismatch {
            outcomes: outcomes.len(),
            treatments: treatments.len(),
            covariate_rows: covariates.nrows(),
        });
    }
    if outcomes.is_empty() {
        return Err(DataError::Empty { what: "dataset" });
    }
    if covariates.ncols() == 0 {
        return Err(DataError::Empty {
            what: "covariate matrix",
        });
    }
    for (row, y) in outcomes.iter().enumerate() {
        if !y.is_finite() {
            return Err(DataError::NonFiniteValue {
                field: "outcomes",
                row,
                column: None,
            });
        }
    }
    for (row, &a) in treatments.iter().enumerate() {
        if !coding.admits(a) {
            return Err(DataError::BadTreatmentCode {
                row,
                value: a,
                coding,
            });
        }
    }
    for row in 0..covariates.nrows() {
        for col in 0..covariates.ncols() {
            if !covariates[(row, col)].is_finite() {
                return Err(DataError::NonFiniteValue {
                    field: "covariates",
                    row,
                    column: Some(col),
                });
            }
        }
    }
    Ok(())
}

/// One observed sample: outcomes, treatments under a declared coding, and a
/// dense covariate matrix with one row per unit. Immutable after construction;
/// all invariants are checked in [`Dataset::new`].
#[derive(Clone, Debug)]
pub struct Dataset {
    outcomes: Vec<f64>,
    treatments: Vec<i8>,
    covariates: DMatrix<f64>,
    coding: TreatmentCoding,
}

impl Dataset {
    pub fn new(
        outcomes: Vec<f64>,
        treatments: Vec<i8>,
        covariates: DMatrix<f64>,
        coding: TreatmentCoding,
    ) -> Result<Self, DataError> {
        validate_dataset(&outcomes, &treatments, &covariates, coding)?;
        Ok(Self {
            outcomes,
            treatments,
            covariates,
            coding,
        })
    }

    pub fn n(&self) -> usize {
        self.outcomes.len()
    }

    pub fn p(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.outcomes
    }

    pub fn treatments(&self) -> &[i8] {
        &self.treatments
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    pub fn coding(&self) -> TreatmentCoding {
        self.coding
    }

    /// Indices of the units whose treatment code equals `code`.
    pub fn arm_indices(&self, code: i8) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| self.treatments[i] == code)
            .collect()
    }

    /// New dataset holding the rows in `idx`, in that order. Panics on an
    /// out-of-range index; callers pass indices produced by the partitioner.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        let outcomes = idx.iter().map(|&i| self.outcomes[i]).collect();
        let treatments = idx.iter().map(|&i| self.treatments[i]).collect();
        let covariates = DMatrix::from_fn(idx.len(), self.p(), |r, c| self.covariates[(idx[r], c)]);
        Dataset {
            outcomes,
            treatments,
            covariates,
            coding: self.coding,
        }
    }

    /// Explicit treatment recoding, 0 <-> -1 and 1 <-> +1. Conversion is never
    /// implicit because the policy loss does sign arithmetic on codes.
    pub fn convert_coding(&self, to: TreatmentCoding) -> Dataset {
        if self.coding == to {
            return self.clone();
        }
        let treatments = self
            .treatments
            .iter()
            .map(|&a| match (self.coding, a) {
                (TreatmentCoding::ZeroOne, 0) => -1,
                (TreatmentCoding::ZeroOne, _) => 1,
                (TreatmentCoding::PlusMinus, -1) => 0,
                (TreatmentCoding::PlusMinus, _) => 1,
            })
            .collect();
        Dataset {
            outcomes: self.outcomes.clone(),
            treatments,
            covariates: self.covariates.clone(),
            coding: to,
        }
    }
}

/// Per-unit contributions from one bag fit, finite by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct Contribution {
    values: Vec<f64>,
}

impl Contribution {
    pub fn new(values: Vec<f64>) -> Result<Self, DataError> {
        if values.is_empty() {
            return Err(DataError::Empty {
                what: "contribution vector",
            });
        }
        for (row, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(DataError::NonFiniteValue {
                    field: "contributions",
                    row,
                    column: None,
                });
            }
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Invalid resampler configuration.
#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("bag size {b} exceeds the sample size {n_total}")]
    BagTooLarge { b: usize, n_total: usize },
    #[error("{s} bags of size {b} need {} units but only {n_total} are available", s * b)]
    TooManyBags { s: usize, b: usize, n_total: usize },
    #[error("at least one bag is required")]
    NoBags,
    #[error("bag size must be positive")]
    EmptyBag,
    #[error("replicate count {r} is below the minimum of 2")]
    TooFewReplicates { r: usize },
    #[error("alpha {alpha} is outside (0,1)")]
    BadAlpha { alpha: f64 },
    #[error("gamma exponent {gamma} is outside (0,1)")]
    BadGamma { gamma: f64 },
    #[error("sample size must be positive")]
    EmptySample,
}

/// Resampler configuration: s bags of size b, r multinomial replicates per
/// bag, and two-sided level 1 - alpha intervals. Construct through
/// [`CBLBConfig::from_bag_size`] or [`CBLBConfig::from_gamma_exponent`], which
/// enforce b <= n_total, s*b <= n_total, s >= 1, r >= 2.
#[derive(Clone, Debug, PartialEq)]
pub struct CBLBConfig {
    pub n_total: usize,
    pub bag_size: usize,
    pub n_bags: usize,
    pub n_replicates: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl CBLBConfig {
    pub fn from_bag_size(
        n_total: usize,
        b: usize,
        s: Option<usize>,
        r: usize,
        alpha: f64,
        seed: u64,
    ) -> Result<Self, ConfigError> {
        if n_total == 0 {
            return Err(ConfigError::EmptySample);
        }
        if b == 0 {
            return Err(ConfigError::EmptyBag);
        }
        if b > n_total {
            return Err(ConfigError::BagTooLarge { b, n_total });
        }
        let s = s.unwrap_or(n_total / b);
        if s == 0 {
            return Err(ConfigError::NoBags);
        }
        if s * b > n_total {
            return Err(ConfigError::TooManyBags { s, b, n_total });
        }
        if r < 2 {
            return Err(ConfigError::TooFewReplicates { r });
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(ConfigError::BadAlpha { alpha });
        }
        Ok(Self {
            n_total,
            bag_size: b,
            n_bags: s,
            n_replicates: r,
            alpha,
            seed,
        })
    }

    /// Sets b = round(n_total^gamma); s defaults to floor(n_total / b) and the
    /// n_total - s*b leftover units are dropped by the partitioner.
    pub fn from_gamma_exponent(
        n_total: usize,
        gamma: f64,
        s: Option<usize>,
        r: usize,
        alpha: f64,
        seed: u64,
    ) -> Result<Self, ConfigError> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(ConfigError::BadGamma { gamma });
        }
        if n_total == 0 {
            return Err(ConfigError::EmptySample);
        }
        let b = (n_total as f64).powf(gamma).round() as usize;
        Self::from_bag_size(n_total, b.max(1), s, r, alpha, seed)
    }

    /// Warns when r is too small for the requested quantiles to move off the
    /// extreme order statistics (r < 2/alpha, e.g. r < 40 at alpha = 0.05).
    pub fn quantile_warning(&self) -> Option<String> {
        let needed = (2.0 / self.alpha).ceil() as usize;
        if self.n_replicates < needed {
            Some(format!(
                "r = {} replicates cannot resolve alpha = {} tails; need at least {}",
                self.n_replicates, self.alpha, needed
            ))
        } else {
            None
        }
    }
}

/// Per-bag percentile interval and replicate spread.
#[derive(Clone, Debug, PartialEq)]
pub struct BagInterval {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub replicate_sd: f64,
}

/// Aggregated interval: endpoints are means of the per-bag quantiles, the
/// point estimate is the mean of the per-bag subset estimates, and se is the
/// mean of the per-bag replicate standard deviations.
#[derive(Clone, Debug)]
pub struct IntervalResult {
    pub point_estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub se: f64,
    pub per_bag: Vec<BagInterval>,
    pub wall_time_seconds: f64,
}
