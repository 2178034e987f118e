//! Federated averaging of linear classifiers, with a centralized baseline,
//! a gradient-perturbation DP baseline and F1 evaluation.

mod dp;
mod eval;
mod model;
mod train;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{RTDataset, Record, Schema};
use crate::error::{Error, Result};
use crate::mapping::{encode, EncodingSchema};

pub use dp::{laplace, train_dp, DPConfig};
pub use eval::{
    confusion, cross_validate, evaluate_f1, f1_score, holdout_split, kfold, kfold_f1, predict, CvReport,
};
pub use model::{objective, read_model, sample_gradient, write_model, ModelFile};
pub use train::{local_train, train_centralized, train_federated, RoundLog, TrainOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Perceptron,
    Svm,
    Logreg,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Perceptron, ModelKind::Svm, ModelKind::Logreg];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Perceptron => "perceptron",
            ModelKind::Svm => "svm",
            ModelKind::Logreg => "logreg",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "perceptron" => Ok(ModelKind::Perceptron),
            "svm" => Ok(ModelKind::Svm),
            "logreg" | "logistic" => Ok(ModelKind::Logreg),
            other => Err(Error::Config(format!("unknown model `{other}`"))),
        }
    }
}

/// Linear model `f(x) = w·x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl ModelParams {
    pub fn zeros(dim: usize) -> Self {
        ModelParams {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }

    pub fn is_finite(&self) -> bool {
        self.bias.is_finite() && self.weights.iter().all(|w| w.is_finite())
    }
}

/// Dense feature rows with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDataset {
    dim: usize,
    x: Vec<f64>,
    y: Vec<bool>,
}

impl EncodedDataset {
    pub fn new(dim: usize) -> Self {
        EncodedDataset {
            dim,
            x: Vec::new(),
            y: Vec::new(),
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>, labels: Vec<bool>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut d = EncodedDataset::new(dim);
        if rows.len() != labels.len() {
            return Err(Error::LengthMismatch {
                expected: rows.len(),
                found: labels.len(),
            });
        }
        for (r, y) in rows.into_iter().zip(labels) {
            d.push(&r, y)?;
        }
        Ok(d)
    }

    /// Encodes generalized (or raw) records against `enc`.
    pub fn encode(schema: &Schema, enc: &EncodingSchema, records: &[Record]) -> Result<Self> {
        let mut d = EncodedDataset::new(enc.len());
        for r in records {
            d.push(&encode(schema, enc, r)?, r.label)?;
        }
        Ok(d)
    }

    pub fn push(&mut self, row: &[f64], label: bool) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::LengthMismatch {
                expected: self.dim,
                found: row.len(),
            });
        }
        self.x.extend_from_slice(row);
        self.y.push(label);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> bool {
        self.y[i]
    }

    pub fn labels(&self) -> &[bool] {
        &self.y
    }

    pub fn positives(&self) -> usize {
        self.y.iter().filter(|&&y| y).count()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut d = EncodedDataset::new(self.dim);
        for &i in indices {
            d.x.extend_from_slice(self.row(i));
            d.y.push(self.y[i]);
        }
        d
    }
}

fn default_rounds() -> usize {
    20
}
fn default_sites() -> usize {
    10
}
fn default_epochs() -> usize {
    1
}
fn default_lr() -> f64 {
    0.05
}
fn default_l2() -> f64 {
    1e-4
}
fn default_model() -> ModelKind {
    ModelKind::Logreg
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FLConfig {
    #[serde(default = "default_sites")]
    pub num_sites: usize,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_epochs")]
    pub local_epochs: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_l2")]
    pub l2: f64,
    #[serde(default = "default_model")]
    pub model: ModelKind,
    #[serde(default)]
    pub seed: u64,
    /// Inverse class-frequency sample weights, computed per shard.
    #[serde(default)]
    pub class_weighting: bool,
}

impl Default for FLConfig {
    fn default() -> Self {
        FLConfig {
            num_sites: default_sites(),
            rounds: default_rounds(),
            local_epochs: default_epochs(),
            learning_rate: default_lr(),
            l2: default_l2(),
            model: default_model(),
            seed: 0,
            class_weighting: false,
        }
    }
}

impl FLConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_sites == 0 {
            return Err(Error::Config("num_sites must be at least 1".into()));
        }
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::Config("l2 must be non-negative".into()));
        }
        Ok(())
    }
}

/// Shuffled index shards whose sizes differ by at most one.
pub fn partition_indices(n: usize, num_sites: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if num_sites == 0 || num_sites > n {
        return Err(Error::contract(format!("cannot split {n} records across {num_sites} sites")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / num_sites, n % num_sites);
    let mut out = Vec::with_capacity(num_sites);
    let mut start = 0;
    for s in 0..num_sites {
        let len = base + usize::from(s < extra);
        out.push(idx[start..start + len].to_vec());
        start += len;
    }
    Ok(out)
}

/// Random disjoint shards covering `d`.
pub fn partition(d: &RTDataset, num_sites: usize, seed: u64) -> Result<Vec<RTDataset>> {
    Ok(partition_indices(d.len(), num_sites, seed)?
        .iter()
        .map(|idx| d.subset(idx))
        .collect())
}

/// Sample-size weighted average of site models.
pub fn aggregate(updates: &[ModelParams], sizes: &[usize]) -> Result<ModelParams> {
    if updates.is_empty() {
        return Err(Error::contract("no updates to aggregate"));
    }
    if updates.len() != sizes.len() {
        return Err(Error::LengthMismatch {
            expected: updates.len(),
            found: sizes.len(),
        });
    }
    let dim = updates[0].dim();
    if let Some(u) = updates.iter().find(|u| u.dim() != dim) {
        return Err(Error::LengthMismatch {
            expected: dim,
            found: u.dim(),
        });
    }
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return Err(Error::contract("aggregate over empty shards"));
    }
    let mut out = ModelParams::zeros(dim);
    for (u, &n) in updates.iter().zip(sizes) {
        let a = n as f64 / total as f64;
        for (o, w) in out.weights.iter_mut().zip(&u.weights) {
            *o += a * w;
        }
        out.bias += a * u.bias;
    }
    Ok(out)
}

// splitmix64 finalizer; used to derive independent RNG streams.
pub(crate) fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// RNG stream for one (seed, site, step, purpose) tuple.
pub(crate) fn stream(seed: u64, site: usize, step: usize, tag: u64) -> ChaCha8Rng {
    let s = mix(mix(mix(mix(seed) ^ site as u64) ^ step as u64) ^ tag);
    ChaCha8Rng::seed_from_u64(s)
}
