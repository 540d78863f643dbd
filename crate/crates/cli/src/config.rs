//! TOML run configuration.

use std::path::{Path, PathBuf};

use mdtail_core::bounds::{ConstantMode, DEFAULT_ROSENTHAL_C0};
use mdtail_core::mc::{UpperSlack, DEFAULT_BUDGET, DEFAULT_DELTA, DEFAULT_REPS, DEFAULT_U_POINTS};
use mdtail_core::{MdtParams, SlowlyVarying};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub law: LawConfig,
    #[serde(default)]
    pub bounds: BoundsConfig,
    #[serde(default)]
    pub plan: PlanConfig,
    #[serde(default)]
    pub entropy: EntropyConfig,
    #[serde(default)]
    pub confidence: ConfidenceConfig,
    #[serde(default)]
    pub moments: MomentsConfig,
    #[serde(default)]
    pub fenchel: FenchelConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LawConfig {
    pub beta: f64,
    pub gamma: f64,
    #[serde(default = "default_v")]
    pub v: String,
    pub u_star: Option<f64>,
}

fn default_v() -> String {
    "c(1)".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeConfig {
    Pessimistic,
    Calibrated,
}

impl From<ModeConfig> for ConstantMode {
    fn from(m: ModeConfig) -> Self {
        match m {
            ModeConfig::Pessimistic => ConstantMode::PessimisticAnalytic,
            ModeConfig::Calibrated => ConstantMode::Calibrated,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    #[serde(default = "default_mode")]
    pub mode: ModeConfig,
    #[serde(default = "default_c0")]
    pub rosenthal_c0: f64,
    pub moment_c1: Option<f64>,
    pub closed_c: Option<f64>,
    /// Seed of the reference simulation in calibrated mode; defaults to `seed + 1`.
    pub calibration_seed: Option<u64>,
    #[serde(default)]
    pub upper_slack: UpperSlack,
}

fn default_mode() -> ModeConfig {
    ModeConfig::Pessimistic
}

fn default_c0() -> f64 {
    DEFAULT_ROSENTHAL_C0
}

impl Default for BoundsConfig {
    fn default() -> Self {
        Self {
            mode: default_mode(),
            rosenthal_c0: default_c0(),
            moment_c1: None,
            closed_c: None,
            calibration_seed: None,
            upper_slack: UpperSlack::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    pub n_grid: Option<Vec<usize>>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_u_points")]
    pub u_points: usize,
    pub u_min: Option<f64>,
    pub u_max: Option<f64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_budget")]
    pub budget: u64,
}

fn default_reps() -> usize {
    DEFAULT_REPS
}
fn default_u_points() -> usize {
    DEFAULT_U_POINTS
}
fn default_delta() -> f64 {
    DEFAULT_DELTA
}
fn default_budget() -> u64 {
    DEFAULT_BUDGET
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            n_grid: None,
            reps: default_reps(),
            seed: 0,
            u_points: default_u_points(),
            u_min: None,
            u_max: None,
            delta: default_delta(),
            budget: default_budget(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntropyConfig {
    #[serde(default = "one_u32")]
    pub d: u32,
    #[serde(default = "one_f64")]
    pub alpha: f64,
    #[serde(default = "one_f64")]
    pub c5: f64,
    #[serde(default = "one_f64")]
    pub c9: f64,
    #[serde(default = "one_f64")]
    pub c10: f64,
    #[serde(default = "default_weights")]
    pub weights: Vec<f64>,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "yes")]
    pub random_phases: bool,
}

fn one_u32() -> u32 {
    1
}
fn one_f64() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}
fn default_weights() -> Vec<f64> {
    vec![1.0, 0.5, 0.25]
}
fn default_m() -> usize {
    64
}

impl Default for EntropyConfig {
    fn default() -> Self {
        Self {
            d: 1,
            alpha: 1.0,
            c5: 1.0,
            c9: 1.0,
            c10: 1.0,
            weights: default_weights(),
            m: default_m(),
            random_phases: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfidenceConfig {
    /// Sample size; ignored when `sample` is given.
    #[serde(default = "default_conf_n")]
    pub n: u64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// File with one evaluation per line.
    pub sample: Option<PathBuf>,
    /// Coverage trials; 0 skips the experiment.
    #[serde(default)]
    pub trials: u64,
}

fn default_conf_n() -> u64 {
    10_000
}

impl Default for ConfidenceConfig {
    fn default() -> Self {
        Self { n: default_conf_n(), delta: default_delta(), sample: None, trials: 0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsConfig {
    #[serde(default = "default_moment_points")]
    pub points: usize,
    #[serde(default = "default_equiv_points")]
    pub equivalence_points: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_moment_points() -> usize {
    64
}
fn default_equiv_points() -> usize {
    40
}
fn default_threshold() -> f64 {
    mdtail_core::moments::EQUIVALENCE_THRESHOLD
}

impl Default for MomentsConfig {
    fn default() -> Self {
        Self {
            points: default_moment_points(),
            equivalence_points: default_equiv_points(),
            threshold: default_threshold(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FenchelConfig {
    #[serde(default = "default_y_min")]
    pub y_min: f64,
    #[serde(default = "default_y_max")]
    pub y_max: f64,
    #[serde(default = "default_y_points")]
    pub points: usize,
}

fn default_y_min() -> f64 {
    1.0
}
fn default_y_max() -> f64 {
    30.0
}
fn default_y_points() -> usize {
    128
}

impl Default for FenchelConfig {
    fn default() -> Self {
        Self { y_min: default_y_min(), y_max: default_y_max(), points: default_y_points() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

fn default_dir() -> PathBuf {
    PathBuf::from("mdtail-out")
}
fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_dir(), formats: default_formats() }
    }
}

/// Flag values that override configuration keys.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub budget: Option<u64>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        if let Some(s) = overrides.seed {
            cfg.plan.seed = s;
        }
        if let Some(o) = &overrides.out {
            cfg.output.dir = o.clone();
        }
        if let Some(b) = overrides.budget {
            cfg.plan.budget = b;
        }
        if let Some(sample) = &cfg.confidence.sample {
            if sample.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.confidence.sample = Some(base.join(sample));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every value before any computation.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |key: &str, msg: String| Err(CliError::Config(format!("{key}: {msg}")));
        self.slowly_varying()?;
        if !(self.law.beta > 2.0 && self.law.beta.is_finite()) {
            return bad("law.beta", format!("must be a finite number above 2, got {}", self.law.beta));
        }
        if !self.law.gamma.is_finite() {
            return bad("law.gamma", "must be finite".into());
        }
        if !(self.bounds.rosenthal_c0 > 0.0 && self.bounds.rosenthal_c0.is_finite()) {
            return bad("bounds.rosenthal_c0", "must be positive".into());
        }
        for (key, v) in [("bounds.moment_c1", self.bounds.moment_c1), ("bounds.closed_c", self.bounds.closed_c)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return bad(key, format!("must be positive, got {v}"));
                }
            }
        }
        if let Some(g) = &self.plan.n_grid {
            if g.is_empty() || g[0] == 0 || g.windows(2).any(|w| w[1] <= w[0]) {
                return bad("plan.n_grid", "must be nonempty, positive and strictly increasing".into());
            }
        }
        if self.plan.reps < mdtail_core::mc::MIN_REPS {
            return bad("plan.reps", format!("must be at least {}", mdtail_core::mc::MIN_REPS));
        }
        if self.plan.u_points < 2 {
            return bad("plan.u_points", "must be at least 2".into());
        }
        if let (Some(a), Some(b)) = (self.plan.u_min, self.plan.u_max) {
            if !(a > 0.0 && b > a) {
                return bad("plan.u_min", "must satisfy 0 < u_min < u_max".into());
            }
        }
        if !(self.plan.delta > 0.0 && self.plan.delta < 1.0) {
            return bad("plan.delta", "must lie in (0, 1)".into());
        }
        if !(self.confidence.delta > 0.0 && self.confidence.delta <= 1.0) {
            return bad("confidence.delta", "must lie in (0, 1]".into());
        }
        if self.confidence.n == 0 {
            return bad("confidence.n", "must be at least 1".into());
        }
        if self.entropy.weights.is_empty() {
            return bad("entropy.weights", "must list at least one weight".into());
        }
        if self.entropy.m == 0 {
            return bad("entropy.m", "must be at least 1".into());
        }
        if self.moments.points < 2 || self.moments.equivalence_points < 2 {
            return bad("moments.points", "grids need at least 2 points".into());
        }
        if !(self.fenchel.y_max > self.fenchel.y_min) || self.fenchel.points < 2 {
            return bad("fenchel", "need y_min < y_max and at least 2 points".into());
        }
        Ok(())
    }

    pub fn slowly_varying(&self) -> Result<SlowlyVarying, CliError> {
        self.law
            .v
            .parse()
            .map_err(|e: mdtail_core::Error| CliError::Config(format!("law.v: {e}")))
    }

    pub fn params(&self) -> Result<MdtParams, CliError> {
        let v = self.slowly_varying()?;
        let p = match self.law.u_star {
            Some(u) => MdtParams::with_activation(self.law.beta, self.law.gamma, v, u),
            None => MdtParams::new(self.law.beta, self.law.gamma, v),
        };
        p.map_err(|e| CliError::Config(format!("law: {e}")))
    }

    pub fn calibration_seed(&self) -> u64 {
        self.bounds.calibration_seed.unwrap_or(self.plan.seed.wrapping_add(1))
    }

    pub fn wants(&self, f: Format) -> bool {
        self.output.formats.contains(&f)
    }
}
