//! JSON run configuration: strict schema, estimator blocks with the
//! simulation-calibrated defaults, and validation with field-level messages.

use cblb_core::aol::AOLConfig;
use cblb_core::data::CBLBConfig;
use cblb_core::dml::DMLConfig;
use cblb_core::kernels::KernelSpec;
use cblb_core::minimax::MinimaxConfig;
use serde::Deserialize;
use std::fmt;
use std::path::PathBuf;

/// Hard cap on the bag size; kernel solves above this are out of scope.
pub const MAX_BAG_SIZE: usize = 20_000;

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    Simulate,
    Timing,
    Analyze,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Minimax,
    Dml,
    AolValue,
    AolCriterion,
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EstimatorKind::Minimax => "minimax",
            EstimatorKind::Dml => "dml",
            EstimatorKind::AolValue => "aol_value",
            EstimatorKind::AolCriterion => "aol_criterion",
        })
    }
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum DgpKind {
    Ate,
    Policy,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamilyKind {
    Linear,
    Gaussian,
    Polynomial,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelBlock {
    pub family: KernelFamilyKind,
    #[serde(default)]
    pub bandwidth: Option<f64>,
    #[serde(default)]
    pub scale: Option<f64>,
    #[serde(default)]
    pub degree: Option<u32>,
    #[serde(default)]
    pub sigma2: f64,
}

impl KernelBlock {
    pub fn to_spec(&self) -> Result<KernelSpec, String> {
        let spec = match self.family {
            KernelFamilyKind::Linear => {
                if self.bandwidth.is_some() || self.scale.is_some() || self.degree.is_some() {
                    return Err("linear kernels take no bandwidth, scale, or degree".into());
                }
                KernelSpec::linear()
                    .with_sigma2(self.sigma2)
                    .map_err(|e| e.to_string())?
            }
            KernelFamilyKind::Gaussian => {
                let bw = self
                    .bandwidth
                    .ok_or("gaussian kernels require a bandwidth")?;
                KernelSpec::gaussian(bw, self.sigma2).map_err(|e| e.to_string())?
            }
            KernelFamilyKind::Polynomial => {
                let scale = self.scale.ok_or("polynomial kernels require a scale")?;
                let degree = self.degree.ok_or("polynomial kernels require a degree")?;
                KernelSpec::polynomial(scale, degree, self.sigma2).map_err(|e| e.to_string())?
            }
        };
        Ok(spec)
    }
}

fn linear_kernel_block() -> KernelBlock {
    KernelBlock {
        family: KernelFamilyKind::Linear,
        bandwidth: None,
        scale: None,
        degree: None,
        sigma2: 0.0,
    }
}

fn minimax_kernel_block() -> KernelBlock {
    KernelBlock {
        family: KernelFamilyKind::Gaussian,
        bandwidth: Some(3.0),
        scale: None,
        degree: None,
        sigma2: 0.01,
    }
}

/// Minimax weighting block. The defaults are the settings the simulation
/// experiments were calibrated with; sigma2 absent means 0.01, an explicit
/// null requests estimation from pilot-fit residuals.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinimaxBlock {
    #[serde(default = "minimax_kernel_block")]
    pub kernel: KernelBlock,
    #[serde(default = "one")]
    pub lambda: f64,
    #[serde(default = "default_noise")]
    pub sigma2: Option<f64>,
}

fn one() -> f64 {
    1.0
}

fn default_noise() -> Option<f64> {
    Some(0.01)
}

impl Default for MinimaxBlock {
    fn default() -> Self {
        Self {
            kernel: minimax_kernel_block(),
            lambda: 1.0,
            sigma2: default_noise(),
        }
    }
}

impl MinimaxBlock {
    pub fn to_config(&self) -> Result<MinimaxConfig, String> {
        let kernel = self.kernel.to_spec()?;
        let mut cfg = MinimaxConfig::new(kernel, kernel, self.lambda).map_err(|e| e.to_string())?;
        if let Some(s2) = self.sigma2 {
            cfg = cfg.with_sigma2(s2);
        }
        Ok(cfg)
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DmlBlock {
    #[serde(default = "linear_kernel_block")]
    pub kernel: KernelBlock,
    #[serde(default = "five")]
    pub folds: usize,
    #[serde(default = "one")]
    pub cost: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_clip")]
    pub clip: f64,
}

fn five() -> usize {
    5
}

fn default_epsilon() -> f64 {
    0.1
}

fn default_clip() -> f64 {
    0.01
}

impl Default for DmlBlock {
    fn default() -> Self {
        Self {
            kernel: linear_kernel_block(),
            folds: 5,
            cost: 1.0,
            epsilon: 0.1,
            clip: 0.01,
        }
    }
}

impl DmlBlock {
    pub fn to_config(&self) -> Result<DMLConfig, String> {
        let cfg = DMLConfig {
            n_folds: self.folds,
            svm_cost: self.cost,
            svr_epsilon: self.epsilon,
            kernel: self.kernel.to_spec()?,
            propensity_clip: self.clip,
            ..DMLConfig::default()
        };
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}

fn default_lambda_grid() -> Vec<f64> {
    vec![0.01, 0.1, 1.0, 10.0]
}

fn half() -> f64 {
    0.5
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AolBlock {
    #[serde(default = "linear_kernel_block")]
    pub kernel: KernelBlock,
    #[serde(default = "default_lambda_grid")]
    pub lambda_grid: Vec<f64>,
    #[serde(default = "one")]
    pub huber_delta: f64,
    #[serde(default = "half")]
    pub propensity: f64,
    #[serde(default = "five")]
    pub cv_folds: usize,
}

impl Default for AolBlock {
    fn default() -> Self {
        Self {
            kernel: linear_kernel_block(),
            lambda_grid: default_lambda_grid(),
            huber_delta: 1.0,
            propensity: 0.5,
            cv_folds: 5,
        }
    }
}

impl AolBlock {
    pub fn to_config(&self) -> Result<AOLConfig, String> {
        let cfg = AOLConfig {
            kernel: self.kernel.to_spec()?,
            lambda_grid: self.lambda_grid.clone(),
            huber_delta: self.huber_delta,
            propensity: self.propensity,
            cv_folds: self.cv_folds,
        };
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoricalColumn {
    pub column: String,
    pub reference: String,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnMapping {
    pub outcome: String,
    pub treatment: String,
    #[serde(default)]
    pub numeric: Vec<String>,
    #[serde(default)]
    pub categorical: Vec<CategoricalColumn>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RowFilter {
    pub column: String,
    #[serde(default)]
    pub min: Option<f64>,
    #[serde(default)]
    pub max: Option<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: CommandKind,
    pub estimator: EstimatorKind,
    #[serde(default)]
    pub dgp: Option<DgpKind>,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub b: Option<usize>,
    #[serde(default)]
    pub gamma_exponent: Option<f64>,
    #[serde(default)]
    pub s: Option<usize>,
    pub r: usize,
    pub alpha: f64,
    pub seed: u64,
    #[serde(default)]
    pub replications: Option<usize>,
    #[serde(default)]
    pub n_grid: Option<Vec<usize>>,
    #[serde(default)]
    pub repetitions: Option<usize>,
    #[serde(default)]
    pub minimax: Option<MinimaxBlock>,
    #[serde(default)]
    pub dml: Option<DmlBlock>,
    #[serde(default)]
    pub aol: Option<AolBlock>,
    #[serde(default)]
    pub input_csv: Option<PathBuf>,
    #[serde(default)]
    pub columns: Option<ColumnMapping>,
    #[serde(default)]
    pub filters: Vec<RowFilter>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    /// Parses and validates a JSON document.
    pub fn from_json(text: &str) -> Result<Self, String> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| format!("config parse error: {e}"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), String> {
        match (self.b, self.gamma_exponent) {
            (Some(_), Some(_)) => {
                return Err("fields b and gamma_exponent are mutually exclusive".into())
            }
            (None, None) => return Err("exactly one of b or gamma_exponent is required".into()),
            _ => {}
        }
        if let Some(b) = self.b {
            if b > MAX_BAG_SIZE {
                return Err(format!("b = {b} exceeds the bag-size cap {MAX_BAG_SIZE}"));
            }
            if b == 0 {
                return Err("b must be positive".into());
            }
        }
        if let Some(g) = self.gamma_exponent {
            if !(g > 0.0 && g < 1.0) {
                return Err(format!("gamma_exponent = {g} must lie strictly in (0, 1)"));
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(format!(
                "alpha = {} must lie strictly in (0, 1)",
                self.alpha
            ));
        }
        if self.r < 2 {
            return Err(format!("r = {} must be at least 2", self.r));
        }
        match self.command {
            CommandKind::Simulate => {
                let dgp = self
                    .dgp
                    .ok_or("simulate requires a dgp field (ate or policy)")?;
                if self.n.is_none() {
                    return Err("simulate requires n".into());
                }
                match self.replications {
                    None => return Err("simulate requires replications".into()),
                    Some(0) => return Err("replications must be positive".into()),
                    Some(_) => {}
                }
                self.check_estimator_dgp(dgp)?;
                if self.input_csv.is_some() || self.columns.is_some() {
                    return Err("input_csv and columns apply only to analyze".into());
                }
            }
            CommandKind::Timing => {
                let dgp = self.dgp.ok_or("timing requires a dgp field")?;
                self.check_estimator_dgp_timing(dgp)?;
                match (&self.n_grid, self.n) {
                    (None, None) => return Err("timing requires n or n_grid".into()),
                    (Some(grid), _) if grid.is_empty() => {
                        return Err("n_grid must be non-empty".into())
                    }
                    _ => {}
                }
                if self.repetitions == Some(0) {
                    return Err("repetitions must be positive".into());
                }
            }
            CommandKind::Analyze => {
                if self.input_csv.is_none() {
                    return Err("analyze requires input_csv".into());
                }
                if self.columns.is_none() {
                    return Err("analyze requires a columns mapping".into());
                }
                if self.dgp.is_some() {
                    return Err("analyze reads data from input_csv; dgp does not apply".into());
                }
            }
        }
        Ok(())
    }

    /// simulate pairs each design with the estimators whose coverage target
    /// is defined: the confounded design carries an effect truth, the
    /// randomized design a value truth. The surrogate-loss criterion has no
    /// truth constant, so it cannot be simulated for coverage.
    fn check_estimator_dgp(&self, dgp: DgpKind) -> Result<(), String> {
        match (dgp, self.estimator) {
            (DgpKind::Ate, EstimatorKind::Minimax | EstimatorKind::Dml) => Ok(()),
            (DgpKind::Policy, EstimatorKind::AolValue) => Ok(()),
            (_, EstimatorKind::AolCriterion) => {
                Err("estimator aol_criterion has no simulation truth; use analyze".into())
            }
            (d, e) => Err(format!(
                "estimator {e} does not match dgp {}",
                if d == DgpKind::Ate { "ate" } else { "policy" }
            )),
        }
    }

    /// timing permits the criterion estimator (no truth needed), but the
    /// design must still feed the estimator a compatible coding.
    fn check_estimator_dgp_timing(&self, dgp: DgpKind) -> Result<(), String> {
        match (dgp, self.estimator) {
            (DgpKind::Ate, EstimatorKind::Minimax | EstimatorKind::Dml) => Ok(()),
            (DgpKind::Policy, EstimatorKind::AolValue | EstimatorKind::AolCriterion) => Ok(()),
            (d, e) => Err(format!(
                "estimator {e} does not match dgp {}",
                if d == DgpKind::Ate { "ate" } else { "policy" }
            )),
        }
    }

    /// Bag geometry for a concrete sample size.
    pub fn cblb_config(&self, n: usize, seed: u64) -> Result<CBLBConfig, String> {
        let cfg = match (self.b, self.gamma_exponent) {
            (Some(b), None) => CBLBConfig::from_bag_size(n, b, self.s, self.r, self.alpha, seed),
            (None, Some(g)) => {
                CBLBConfig::from_gamma_exponent(n, g, self.s, self.r, self.alpha, seed)
            }
            _ => unreachable!("validated earlier"),
        }
        .map_err(|e| e.to_string())?;
        if cfg.bag_size > MAX_BAG_SIZE {
            return Err(format!(
                "bag size {} exceeds the cap {MAX_BAG_SIZE}",
                cfg.bag_size
            ));
        }
        Ok(cfg)
    }

    pub fn minimax_block(&self) -> MinimaxBlock {
        self.minimax.clone().unwrap_or_default()
    }

    pub fn dml_block(&self) -> DmlBlock {
        self.dml.clone().unwrap_or_default()
    }

    pub fn aol_block(&self) -> AolBlock {
        self.aol.clone().unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(cmd: &str) -> String {
        format!(
            r#"{{"command": "{cmd}", "estimator": "minimax", "dgp": "ate",
                "n": 400, "gamma_exponent": 0.7, "r": 50, "alpha": 0.05,
                "seed": 7, "replications": 3}}"#
        )
    }

    #[test]
    fn accepts_a_minimal_simulate_config() {
        let cfg = RunConfig::from_json(&base("simulate")).unwrap();
        assert_eq!(cfg.command, CommandKind::Simulate);
        let cblb = cfg.cblb_config(400, 7).unwrap();
        assert_eq!(cblb.bag_size, 66);
    }

    #[test]
    fn rejects_unknown_keys() {
        let text = base("simulate").replace("\"n\": 400", "\"n\": 400, \"shoe_size\": 44");
        let err = RunConfig::from_json(&text).unwrap_err();
        assert!(err.contains("shoe_size"), "message was: {err}");
    }

    #[test]
    fn rejects_both_bag_parameters() {
        let text = base("simulate").replace("\"n\": 400", "\"n\": 400, \"b\": 20");
        let err = RunConfig::from_json(&text).unwrap_err();
        assert!(err.contains("mutually exclusive"), "message was: {err}");
        let text = base("simulate").replace(", \"gamma_exponent\": 0.7", "");
        let err = RunConfig::from_json(&text).unwrap_err();
        assert!(err.contains("exactly one"), "message was: {err}");
    }

    #[test]
    fn rejects_the_criterion_estimator_for_simulate() {
        let text = base("simulate").replace("\"minimax\"", "\"aol_criterion\"");
        let err = RunConfig::from_json(&text).unwrap_err();
        assert!(err.contains("no simulation truth"), "message was: {err}");
    }

    #[test]
    fn rejects_mismatched_estimator_and_dgp() {
        let text = base("simulate").replace("\"ate\"", "\"policy\"");
        let err = RunConfig::from_json(&text).unwrap_err();
        assert!(err.contains("does not match"), "message was: {err}");
    }

    #[test]
    fn enforces_the_bag_cap() {
        let text = base("simulate")
            .replace(", \"gamma_exponent\": 0.7", ", \"b\": 30000")
            .replace("\"n\": 400", "\"n\": 100000");
        let err = RunConfig::from_json(&text).unwrap_err();
        assert!(err.contains("cap"), "message was: {err}");
    }

    #[test]
    fn parse_errors_carry_position_information() {
        let err = RunConfig::from_json("{\n  \"command\": simulate\n}").unwrap_err();
        assert!(err.contains("line 2"), "message was: {err}");
    }

    #[test]
    fn kernel_blocks_build_specs() {
        let block: KernelBlock =
            serde_json::from_str(r#"{"family": "gaussian", "bandwidth": 3.0, "sigma2": 0.01}"#)
                .unwrap();
        let spec = block.to_spec().unwrap();
        assert_eq!(spec.sigma2(), 0.01);
        let bad: KernelBlock =
            serde_json::from_str(r#"{"family": "polynomial", "scale": 2.0}"#).unwrap();
        assert!(bad.to_spec().unwrap_err().contains("degree"));
    }
}
