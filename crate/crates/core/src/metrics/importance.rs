//! Permutation importance of QID attributes under a logistic model.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::WeightVector;
use crate::dataset::RTDataset;
use crate::error::{Error, Result};
use crate::flsim::{
    holdout_split, objective, train_centralized, EncodedDataset, FLConfig, ModelKind, ModelParams,
};
use crate::mapping::{encode, EncodingSchema, Slot};

fn default_shuffles() -> usize {
    5
}
fn default_epochs() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImportanceConfig {
    #[serde(default = "default_shuffles")]
    pub shuffles: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ImportanceConfig {
    fn default() -> Self {
        ImportanceConfig {
            shuffles: default_shuffles(),
            epochs: default_epochs(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureImportance {
    pub weights: WeightVector,
    /// Mean log-loss increase per QID attribute, before clamping.
    pub raw: Vec<f64>,
    /// QID names, most important first.
    pub ranking: Vec<String>,
}

fn mean_log_loss(model: &ModelParams, d: &EncodedDataset) -> f64 {
    objective(ModelKind::Logreg, model, d, 0.0, None).0
}

/// Log-loss increase on a 30% holdout when one QID attribute's one-hot block
/// is permuted across rows. The same permutation is used for every
/// attribute in a shuffle, and drops are clamped at zero and normalized.
pub fn feature_importance(d: &RTDataset, cfg: &ImportanceConfig) -> Result<FeatureImportance> {
    let schema = &d.schema;
    let pos = d.positives();
    if pos < 2 || d.len() - pos < 2 {
        return Err(Error::contract("feature importance needs at least two records of each class"));
    }
    let all: Vec<usize> = (0..schema.qids().len()).collect();
    let enc = EncodingSchema::leaves(schema, &all);
    let labels: Vec<bool> = d.records.iter().map(|r| r.label).collect();
    let (train_idx, test_idx) = holdout_split(&labels, 0.3, cfg.seed)?;
    let rows = |idx: &[usize]| -> Result<EncodedDataset> {
        let mut e = EncodedDataset::new(enc.len());
        for &i in idx {
            e.push(&encode(schema, &enc, &d.records[i])?, d.records[i].label)?;
        }
        Ok(e)
    };
    let train = rows(&train_idx)?;
    let test = rows(&test_idx)?;
    let fl = FLConfig {
        num_sites: 1,
        rounds: cfg.epochs.max(1),
        local_epochs: 1,
        learning_rate: 0.05,
        l2: 1e-4,
        model: ModelKind::Logreg,
        seed: cfg.seed,
        class_weighting: false,
    };
    let model = train_centralized(&train, &fl)?.model;
    let base = mean_log_loss(&model, &test);

    // feature columns of each QID attribute
    let blocks: Vec<Vec<usize>> = all
        .iter()
        .map(|&q| {
            let h = &schema.qids()[q].hierarchy;
            h.leaves()
                .iter()
                .filter(|&&l| enc.contains(Slot::Qid(q), l))
                .map(|&l| encode_position(&enc, Slot::Qid(q), l))
                .collect()
        })
        .collect();

    let mut raw = vec![0.0; all.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x1b9_0a7e);
    let shuffles = cfg.shuffles.max(1);
    for _ in 0..shuffles {
        let mut perm: Vec<usize> = (0..test.len()).collect();
        perm.shuffle(&mut rng);
        for (q, cols) in blocks.iter().enumerate() {
            let mut shuffled = EncodedDataset::new(test.dim());
            for (i, &src) in perm.iter().enumerate() {
                let mut row = test.row(i).to_vec();
                for &c in cols {
                    row[c] = test.row(src)[c];
                }
                shuffled.push(&row, test.label(i))?;
            }
            raw[q] += (mean_log_loss(&model, &shuffled) - base) / shuffles as f64;
        }
    }
    let clamped: Vec<f64> = raw.iter().map(|v| v.max(0.0)).collect();
    let weights = WeightVector::from_relational(schema, &clamped)?;
    let mut order: Vec<(f64, String)> = weights
        .relational()
        .iter()
        .zip(weights.names())
        .map(|(&w, n)| (w, n.clone()))
        .collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    Ok(FeatureImportance {
        weights,
        raw,
        ranking: order.into_iter().map(|(_, n)| n).collect(),
    })
}

fn encode_position(enc: &EncodingSchema, slot: Slot, node: usize) -> usize {
    enc.position(slot, node).expect("feature present")
}
