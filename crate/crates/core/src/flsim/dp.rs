use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::sample_gradient;
use super::train::{check_shards, class_weights, log_entry};
use super::{aggregate, stream, EncodedDataset, FLConfig, ModelParams, RoundLog, TrainOutput};
use crate::error::{Error, Result};

const NOISE_TAG: u64 = 0x4450_4e00;

fn default_clip() -> f64 {
    2.0
}
fn default_dp_lr() -> f64 {
    2.0
}

/// Budget and clipping for the differentially private baseline.
///
/// `epsilon` covers the whole training run and is split evenly over rounds.
/// Sites hold disjoint records, so each record is charged only by its own
/// site's releases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DPConfig {
    pub epsilon: f64,
    /// L1 bound on every per-sample gradient (weights and bias together).
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
    /// Step size of the one noisy full-batch step each site takes per round.
    #[serde(default = "default_dp_lr")]
    pub learning_rate: f64,
}

impl DPConfig {
    pub fn new(epsilon: f64) -> Self {
        DPConfig {
            epsilon,
            clip_norm: default_clip(),
            learning_rate: default_dp_lr(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.clip_norm > 0.0 && self.clip_norm.is_finite()) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("dp learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// One draw from a zero-centred Laplace distribution.
pub fn laplace<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> f64 {
    let a: f64 = rng.sample(Exp1);
    let b: f64 = rng.sample(Exp1);
    scale * (a - b)
}

/// Mean of L1-clipped per-sample gradients, bias last. Class weights are
/// applied after clipping; the second value is the largest weight, which
/// scales the sensitivity.
fn clipped_mean_gradient(shard: &EncodedDataset, p: &ModelParams, cfg: &FLConfig, clip: f64) -> (Vec<f64>, f64) {
    let dim = shard.dim();
    let weights = class_weights(shard, cfg.class_weighting);
    let w_max = weights.as_ref().map_or(1.0, |w| w.iter().copied().fold(1.0, f64::max));
    let mut sum = vec![0.0; dim + 1];
    for i in 0..shard.len() {
        let x = shard.row(i);
        let (_, g) = sample_gradient(cfg.model, p.score(x), shard.label(i));
        if g == 0.0 {
            continue;
        }
        let l1 = g.abs() * (x.iter().map(|v| v.abs()).sum::<f64>() + 1.0);
        let scale = if l1 > clip { clip / l1 } else { 1.0 } * weights.as_ref().map_or(1.0, |w| w[i]);
        for (s, xv) in sum.iter_mut().zip(x) {
            *s += scale * g * xv;
        }
        sum[dim] += scale * g;
    }
    let n = shard.len() as f64;
    sum.iter_mut().for_each(|s| *s /= n);
    (sum, w_max)
}

/// Federated training in which every site releases one noisy gradient step
/// per round. Replacing one record moves a site's clipped mean gradient by at
/// most `2C/n` in L1 (times the largest class weight when weighting is on),
/// so Laplace noise of that scale over the per-round budget makes each
/// release `epsilon / rounds`-DP.
pub fn train_dp(shards: &[EncodedDataset], cfg: &FLConfig, dp: &DPConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    dp.validate()?;
    let dim = check_shards(shards)?;
    let sizes: Vec<usize> = shards.iter().map(EncodedDataset::len).collect();
    let eps_round = dp.epsilon / cfg.rounds as f64;
    let mut global = ModelParams::zeros(dim);
    let mut log = Vec::with_capacity(cfg.rounds * shards.len());
    for round in 0..cfg.rounds {
        let results: Vec<(ModelParams, RoundLog)> = shards
            .par_iter()
            .enumerate()
            .map(|(site, shard)| {
                let (mut g, w_max) = clipped_mean_gradient(shard, &global, cfg, dp.clip_norm);
                let scale = 2.0 * dp.clip_norm * w_max / (shard.len() as f64 * eps_round);
                let mut rng = stream(cfg.seed, site, round, NOISE_TAG);
                g.iter_mut().for_each(|v| *v += laplace(&mut rng, scale));
                let mut p = global.clone();
                for (w, gv) in p.weights.iter_mut().zip(&g) {
                    *w -= dp.learning_rate * (gv + cfg.l2 * *w);
                }
                p.bias -= dp.learning_rate * g[dim];
                if !p.is_finite() {
                    return Err(Error::Divergence { round });
                }
                let entry = log_entry(shard, &p, cfg, round, site);
                Ok((p, entry))
            })
            .collect::<Result<_>>()?;
        let (locals, entries): (Vec<_>, Vec<_>) = results.into_iter().unzip();
        log.extend(entries);
        global = aggregate(&locals, &sizes)?;
    }
    Ok(TrainOutput { model: global, log })
}
