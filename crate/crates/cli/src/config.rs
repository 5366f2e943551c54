//! Run configuration: one JSON file per run, validated before any work.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use degrade_core::addt::{AddtDesign, AddtMethod, AddtOptions, AddtParametricModel, TiOptions};
use degrade_core::bayes::coating::CoatingSpec;
use degrade_core::bayes::fatigue::FatigueSpec;
use degrade_core::bayes::McmcSettings;
use degrade_core::data::{AddtSchema, FailureThreshold, RmdtSchema};
use degrade_core::gpm::{BootstrapOptions, GpmFitOptions, GpmModelSpec};
use degrade_core::nonparam::BandTransform;
use degrade_core::optim::OptimOptions;
use degrade_core::sp::SpModelSpec;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Fit,
    PredictCdf,
    Rul,
    Ti,
    Km,
    Simulate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Fit => "fit",
            Command::PredictCdf => "predict-cdf",
            Command::Rul => "rul",
            Command::Ti => "ti",
            Command::Km => "km",
            Command::Simulate => "simulate",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Optional; must agree with the command given on the command line.
    pub command: Option<Command>,
    pub seed: Option<u64>,
    pub data: Option<DataConfig>,
    pub threshold: Option<FailureThreshold>,
    pub gpm: Option<GpmBlock>,
    pub sp: Option<SpBlock>,
    pub bayes: Option<BayesBlock>,
    pub addt: Option<AddtBlock>,
    pub times: Option<TimeGrid>,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub output: OutputConfig,
    pub simulate: Option<SimulateBlock>,
    #[serde(default)]
    pub km: KmBlock,
    pub rul: Option<RulBlock>,
    #[serde(default)]
    pub ti: TiOptions,
}

fn default_level() -> f64 {
    0.95
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub rmdt: Option<PathBuf>,
    pub addt: Option<PathBuf>,
    #[serde(default)]
    pub rmdt_schema: RmdtSchema,
    #[serde(default)]
    pub addt_schema: AddtSchema,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpmBlock {
    pub model: GpmModelSpec,
    #[serde(default)]
    pub fit: GpmFitOptions,
    #[serde(default = "default_draws")]
    pub draws: usize,
    /// Raw accelerator value (°C) for prediction.
    pub use_condition: Option<f64>,
    pub bootstrap: Option<BootstrapOptions>,
}

fn default_draws() -> usize {
    100_000
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpBlock {
    /// Process and starting values.
    pub model: SpModelSpec,
    #[serde(default)]
    pub optim: OptimOptions,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BayesModel {
    Coating(CoatingSpec),
    Fatigue(FatigueSpec),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BayesBlock {
    pub model: BayesModel,
    #[serde(default)]
    pub mcmc: McmcSettings,
    /// Covariates of a new unit for coating predictions.
    pub new_unit: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AddtBlock {
    pub method: AddtMethod,
    #[serde(default)]
    pub options: AddtOptions,
    /// Use temperature (°C) for failure-time predictions.
    pub use_condition_c: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KmBlock {
    #[serde(default = "default_level")]
    pub level: f64,
    pub range: Option<[f64; 2]>,
    #[serde(default)]
    pub transform: BandTransform,
}

impl Default for KmBlock {
    fn default() -> Self {
        Self { level: default_level(), range: None, transform: BandTransform::default() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RulBlock {
    /// Unit id; a new unit when absent.
    pub unit: Option<String>,
    /// Current age (coating).
    #[serde(default)]
    pub t0: f64,
    /// Residual-life horizons (coating).
    pub horizons: Option<TimeGrid>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum TimeGrid {
    List(Vec<f64>),
    Range(GridRange),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridRange {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl TimeGrid {
    pub fn values(&self) -> Result<Vec<f64>, CliError> {
        let v = match self {
            TimeGrid::List(v) => v.clone(),
            TimeGrid::Range(r) => {
                if r.points < 2 || !(r.stop > r.start) {
                    return Err(CliError::config("time grid needs stop > start and at least 2 points"));
                }
                (0..r.points).map(|i| r.start + (r.stop - r.start) * i as f64 / (r.points - 1) as f64).collect()
            }
        };
        if v.is_empty() || v.iter().any(|t| !t.is_finite()) || v.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CliError::config("time grid must be finite and strictly increasing"));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SimulateBlock {
    Gpm(GpmSimulation),
    Sp(SpSimulation),
    Addt(AddtSimulation),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpmSimulation {
    pub model: GpmModelSpec,
    /// Reported parameter values (`mu_*`, `sd_*`, `corr_*`, `sigma_eps`, fixed effects).
    pub truth: BTreeMap<String, f64>,
    pub units: usize,
    pub times: TimeGrid,
    /// Static covariate values, recycled over units.
    #[serde(default)]
    pub covariates: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpSimulation {
    pub model: SpModelSpec,
    pub units: usize,
    pub times: TimeGrid,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AddtSimulation {
    pub truth: AddtParametricModel,
    pub design: AddtDesign,
}

/// The single model block of a config.
pub enum ModelBlock<'a> {
    Gpm(&'a GpmBlock),
    Sp(&'a SpBlock),
    Bayes(&'a BayesBlock),
    Addt(&'a AddtBlock),
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::config(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(d) = cfg.data.as_mut() {
            for p in [&mut d.rmdt, &mut d.addt].into_iter().flatten() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        if let Some(dir) = cfg.output.dir.as_mut() {
            if dir.is_relative() {
                *dir = base.join(&*dir);
            }
        }
        Ok(cfg)
    }

    /// Exactly one model block may be present.
    pub fn model(&self) -> Result<Option<ModelBlock<'_>>, CliError> {
        let mut present = Vec::new();
        let mut block = None;
        if let Some(b) = &self.gpm {
            present.push("gpm");
            block = Some(ModelBlock::Gpm(b));
        }
        if let Some(b) = &self.sp {
            present.push("sp");
            block = Some(ModelBlock::Sp(b));
        }
        if let Some(b) = &self.bayes {
            present.push("bayes");
            block = Some(ModelBlock::Bayes(b));
        }
        if let Some(b) = &self.addt {
            present.push("addt");
            block = Some(ModelBlock::Addt(b));
        }
        if present.len() > 1 {
            let names: Vec<String> = present.iter().map(|n| format!("`{n}`")).collect();
            return Err(CliError::config(format!("conflicting model blocks {}: use exactly one", names.join(" and "))));
        }
        Ok(block)
    }

    pub fn require_model(&self, command: Command) -> Result<ModelBlock<'_>, CliError> {
        self.model()?.ok_or_else(|| CliError::config(format!("`{}` needs a model block (gpm, sp, bayes or addt)", command.name())))
    }

    pub fn require_threshold(&self) -> Result<FailureThreshold, CliError> {
        self.threshold.ok_or_else(|| CliError::config("missing `threshold` block"))
    }

    pub fn require_times(&self) -> Result<Vec<f64>, CliError> {
        self.times.as_ref().ok_or_else(|| CliError::config("missing `times`"))?.values()
    }

    pub fn data(&self) -> Result<&DataConfig, CliError> {
        self.data.as_ref().ok_or_else(|| CliError::config("missing `data` block"))
    }
}
