//! Experiment configuration file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use synfl::dataset::SynthConfig;
use synfl::flsim::{FLConfig, ModelKind};
use synfl::metrics::ImportanceConfig;
use synfl::verifier::DEFAULT_BUDGET;

/// Where the records come from: a generator (one dataset per seed) or files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Schema file; relative paths resolve against the config file.
    #[serde(default)]
    pub schema: Option<PathBuf>,
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub synth: Option<SynthConfig>,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

fn default_test_fraction() -> f64 {
    0.3
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            schema: None,
            dataset: None,
            synth: Some(SynthConfig::default()),
            test_fraction: default_test_fraction(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightSource {
    Uniform,
    Importance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnonymizationConfig {
    pub k: Vec<usize>,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_weights")]
    pub weights: WeightSource,
    /// QID attributes kept as model features; 0 keeps all.
    #[serde(default)]
    pub top_n: usize,
    #[serde(default)]
    pub importance: ImportanceConfig,
    #[serde(default = "default_budget")]
    pub budget: u64,
}

fn default_m() -> usize {
    2
}
fn default_delta() -> f64 {
    0.95
}
fn default_weights() -> WeightSource {
    WeightSource::Importance
}
fn default_budget() -> u64 {
    DEFAULT_BUDGET
}

impl Default for AnonymizationConfig {
    fn default() -> Self {
        AnonymizationConfig {
            k: vec![3, 5, 10, 20, 50],
            m: default_m(),
            delta: default_delta(),
            weights: default_weights(),
            top_n: 0,
            importance: ImportanceConfig::default(),
            budget: default_budget(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpGrid {
    pub epsilon: Vec<f64>,
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
    #[serde(default = "default_dp_lr")]
    pub learning_rate: f64,
}

fn default_clip() -> f64 {
    2.0
}
fn default_dp_lr() -> f64 {
    2.0
}

impl Default for DpGrid {
    fn default() -> Self {
        DpGrid {
            epsilon: vec![0.01, 0.1, 0.5, 0.9],
            clip_norm: default_clip(),
            learning_rate: default_dp_lr(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default = "default_models")]
    pub models: Vec<ModelKind>,
    /// Cross-validation folds used by `train`.
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub anonymization: AnonymizationConfig,
    #[serde(default)]
    pub fl: FLConfig,
    #[serde(default)]
    pub dp: DpGrid,
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4, 5]
}
fn default_out() -> PathBuf {
    PathBuf::from("runs")
}
fn default_models() -> Vec<ModelKind> {
    vec![ModelKind::Logreg]
}
fn default_folds() -> usize {
    5
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seeds: default_seeds(),
            out_dir: default_out(),
            models: default_models(),
            folds: default_folds(),
            data: DataConfig::default(),
            anonymization: AnonymizationConfig::default(),
            fl: FLConfig::default(),
            dp: DpGrid::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses a config file and resolves data paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: ExperimentConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for p in [&mut cfg.data.schema, &mut cfg.data.dataset].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            bail!("seeds must not be empty");
        }
        if self.models.is_empty() {
            bail!("models must not be empty");
        }
        if self.anonymization.k.is_empty() {
            bail!("anonymization.k must not be empty");
        }
        if let Some(k) = self.anonymization.k.iter().find(|&&k| k < 2) {
            bail!("k values must be at least 2, got {k}");
        }
        if !(0.0..=1.0).contains(&self.anonymization.delta) {
            bail!("delta must lie in [0,1]");
        }
        if self.dp.epsilon.is_empty() {
            bail!("dp.epsilon must not be empty");
        }
        if let Some(e) = self.dp.epsilon.iter().find(|&&e| e.is_nan() || e <= 0.0) {
            bail!("epsilon values must be positive, got {e}");
        }
        if !(self.data.test_fraction > 0.0 && self.data.test_fraction < 1.0) {
            bail!("data.test_fraction must lie in (0,1)");
        }
        match (&self.data.synth, &self.data.schema, &self.data.dataset) {
            (Some(_), None, None) | (None, Some(_), Some(_)) => {}
            _ => bail!("data needs either [data.synth] or both data.schema and data.dataset"),
        }
        self.fl.validate()?;
        Ok(())
    }

    /// Canonical TOML form, used for the header echo in every output.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
