//! Experiment configuration read from TOML.

use std::path::{Path, PathBuf};

use confgame_core::game_model::spec_io::load_spec;
use confgame_core::learner::InnerMin;
use confgame_core::moments::NuisanceMode;
use confgame_core::rng::{derive_seed, Purpose};
use confgame_core::sieve::BasisKind;
use confgame_core::smd::RegionSchedule;
use serde::{Deserialize, Serialize};

use crate::policies::{resolve_policy_name, ClassChoice};

/// Metric names emitted in reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Root mean squared error of every reward-block coefficient against the truth.
    RmseTheta,
    /// Whether the joint region-membership event holds (1 or 0).
    Coverage,
    /// Absolute error of the estimated value of an evaluation policy.
    JError,
    /// Regret of the learned policy pair against the in-class optimum.
    Gap,
    /// Pessimistic value of the learned policy pair.
    PessValue,
}

impl Metric {
    /// Every metric in report order.
    pub const ALL: [Metric; 5] = [Metric::RmseTheta, Metric::Coverage, Metric::JError, Metric::Gap, Metric::PessValue];

    /// Name used in CSV files.
    pub fn name(self) -> &'static str {
        match self {
            Metric::RmseTheta => "rmse_theta",
            Metric::Coverage => "coverage",
            Metric::JError => "j_error",
            Metric::Gap => "gap",
            Metric::PessValue => "pess_value",
        }
    }
}

/// Serializable form of [`NuisanceMode`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeChoice {
    #[default]
    OracleNuisance,
    Joint,
}

impl From<ModeChoice> for NuisanceMode {
    fn from(m: ModeChoice) -> Self {
        match m {
            ModeChoice::OracleNuisance => NuisanceMode::OracleNuisance,
            ModeChoice::Joint => NuisanceMode::Joint,
        }
    }
}

/// Serializable form of [`BasisKind`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisChoice {
    #[default]
    Saturated,
    TensorPolynomial,
}

impl From<BasisChoice> for BasisKind {
    fn from(b: BasisChoice) -> Self {
        match b {
            BasisChoice::Saturated => BasisKind::Saturated,
            BasisChoice::TensorPolynomial => BasisKind::TensorPolynomial,
        }
    }
}

/// Inner-minimisation choice of the learner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InnerChoice {
    #[default]
    Sampled,
    Exact,
}

/// A replication experiment over a grid of sample sizes and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Identifier written in every report row.
    pub id: String,
    /// Built-in fixture name or spec file path.
    pub spec: String,
    /// Strictly increasing trajectory counts.
    pub n_grid: Vec<usize>,
    /// Explicit seeds; when empty, `replications` seeds are derived from `master_seed`.
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default = "default_master_seed")]
    pub master_seed: u64,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub basis: BasisChoice,
    /// Constant of the basis-size schedule `k(n) = ⌈c·n^{1/3}⌉` for polynomial bases.
    #[serde(default = "default_k_constant")]
    pub k_constant: f64,
    /// Region-size schedule, written as the `[eta]` table.
    #[serde(default, rename = "eta")]
    pub schedule: RegionSchedule,
    #[serde(default)]
    pub mode: ModeChoice,
    /// Two-fold cross-fitting of the evaluation metric.
    #[serde(default)]
    pub cross_fit: bool,
    #[serde(default)]
    pub inner: InnerChoice,
    /// Members sampled per region by the sampled inner minimisation.
    #[serde(default = "default_members")]
    pub members: usize,
    #[serde(default)]
    pub class: ClassChoice,
    /// Evaluation policies: built-in names or policy CSV paths.
    #[serde(default = "default_policies")]
    pub policies: Vec<String>,
    /// Metrics to compute.
    #[serde(default = "default_metrics")]
    pub metrics: Vec<Metric>,
    /// Output directory.
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_master_seed() -> u64 {
    20_240_601
}
fn default_replications() -> usize {
    1
}
fn default_k_constant() -> f64 {
    1.0
}
fn default_members() -> usize {
    confgame_core::learner::DEFAULT_MEMBERS
}
fn default_policies() -> Vec<String> {
    vec!["always-1".into()]
}
fn default_metrics() -> Vec<Metric> {
    Metric::ALL.to_vec()
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// Configuration problems found before running.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl ExperimentConfig {
    /// Minimal configuration for one fixture with default settings.
    pub fn new(id: &str, spec: &str, n_grid: Vec<usize>) -> Self {
        toml::from_str(&format!("id = {id:?}\nspec = {spec:?}\nn_grid = {n_grid:?}\n")).expect("minimal config parses")
    }

    /// Parses TOML text and validates it.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a TOML file.
    pub fn read(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Checks grid ordering, seeds, fixtures and policy names.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.n_grid.is_empty() || self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad("n_grid must be non-empty and strictly increasing".into());
        }
        if self.n_grid[0] == 0 {
            return bad("n_grid entries must be positive".into());
        }
        if self.seeds.is_empty() && self.replications == 0 {
            return bad("at least one seed is required".into());
        }
        if self.metrics.is_empty() {
            return bad("at least one metric is required".into());
        }
        let bundle = load_spec(&self.spec).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for p in &self.policies {
            resolve_policy_name(p, bundle.game.spaces()).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        let r = &self.schedule;
        if !(r.constant >= 0.0 && r.smoothness > 0.0 && r.dimension > 0.0 && r.ill_posedness >= 0.0) {
            return bad("eta settings must be non-negative with positive alpha and d".into());
        }
        Ok(())
    }

    /// Seeds of the replications, in report order.
    pub fn seed_list(&self) -> Vec<u64> {
        if !self.seeds.is_empty() {
            return self.seeds.clone();
        }
        (0..self.replications as u64).map(|i| derive_seed(self.master_seed, Purpose::Replication, i)).collect()
    }

    /// Inner minimisation of the learner.
    pub fn inner_min(&self) -> InnerMin {
        match self.inner {
            InnerChoice::Sampled => InnerMin::Sampled { members: self.members },
            InnerChoice::Exact => InnerMin::Exact,
        }
    }

    /// Canonical JSON form used for hashing.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}
