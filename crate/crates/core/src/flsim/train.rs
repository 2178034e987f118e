use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::eval::f1_on;
use super::model::{objective, sample_gradient};
use super::{aggregate, stream, EncodedDataset, FLConfig, ModelParams};
use crate::error::{Error, Result};

const SGD_TAG: u64 = 0x5347_4400;

/// Per-site statistics after one round of local training.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundLog {
    pub round: usize,
    pub site: usize,
    pub loss: f64,
    pub grad_norm: f64,
    /// F1 of the local model on the site's own data.
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub model: ModelParams,
    pub log: Vec<RoundLog>,
}

/// Inverse class-frequency weights, normalized to mean one.
pub(crate) fn class_weights(d: &EncodedDataset, enabled: bool) -> Option<Vec<f64>> {
    if !enabled {
        return None;
    }
    let n = d.len() as f64;
    let pos = d.positives() as f64;
    let neg = n - pos;
    if pos == 0.0 || neg == 0.0 {
        return None;
    }
    let (wp, wn) = (n / (2.0 * pos), n / (2.0 * neg));
    Some(d.labels().iter().map(|&y| if y { wp } else { wn }).collect())
}

/// Runs `cfg.local_epochs` passes of per-sample (sub)gradient descent from
/// `global` on one shard. `site` and `round` select the shuffling stream, so
/// the result does not depend on scheduling.
pub fn local_train(
    shard: &EncodedDataset,
    global: &ModelParams,
    cfg: &FLConfig,
    site: usize,
    round: usize,
) -> Result<ModelParams> {
    if shard.is_empty() {
        return Err(Error::contract(format!("site {site} has no training data")));
    }
    if shard.dim() != global.dim() {
        return Err(Error::LengthMismatch {
            expected: global.dim(),
            found: shard.dim(),
        });
    }
    let weights = class_weights(shard, cfg.class_weighting);
    let mut p = global.clone();
    let eta = cfg.learning_rate;
    let decay = 1.0 - eta * cfg.l2;
    let mut order: Vec<usize> = (0..shard.len()).collect();
    for epoch in 0..cfg.local_epochs {
        let step = round * cfg.local_epochs + epoch;
        order.sort_unstable();
        order.shuffle(&mut stream(cfg.seed, site, step, SGD_TAG));
        for &i in &order {
            let x = shard.row(i);
            let (_, g) = sample_gradient(cfg.model, p.score(x), shard.label(i));
            let g = g * weights.as_ref().map_or(1.0, |w| w[i]);
            if cfg.l2 > 0.0 {
                p.weights.iter_mut().for_each(|w| *w *= decay);
            }
            if g != 0.0 {
                for (w, xv) in p.weights.iter_mut().zip(x) {
                    *w -= eta * g * xv;
                }
                p.bias -= eta * g;
            }
        }
        if !p.is_finite() {
            return Err(Error::Divergence { round });
        }
    }
    Ok(p)
}

pub(crate) fn log_entry(shard: &EncodedDataset, p: &ModelParams, cfg: &FLConfig, round: usize, site: usize) -> RoundLog {
    let weights = class_weights(shard, cfg.class_weighting);
    let (loss, g) = objective(cfg.model, p, shard, cfg.l2, weights.as_deref());
    let grad_norm = (g.weights.iter().map(|v| v * v).sum::<f64>() + g.bias * g.bias).sqrt();
    RoundLog {
        round,
        site,
        loss,
        grad_norm,
        f1: f1_on(p, shard),
    }
}

pub(crate) fn check_shards(shards: &[EncodedDataset]) -> Result<usize> {
    let first = shards.first().ok_or_else(|| Error::contract("no shards"))?;
    for (s, d) in shards.iter().enumerate() {
        if d.dim() != first.dim() {
            return Err(Error::LengthMismatch {
                expected: first.dim(),
                found: d.dim(),
            });
        }
        if d.is_empty() {
            return Err(Error::contract(format!("site {s} has no training data")));
        }
    }
    Ok(first.dim())
}

/// Federated averaging: every round broadcasts the global model, trains it
/// locally at every site and replaces it by the size-weighted average.
pub fn train_federated(shards: &[EncodedDataset], cfg: &FLConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let dim = check_shards(shards)?;
    let sizes: Vec<usize> = shards.iter().map(EncodedDataset::len).collect();
    let mut global = ModelParams::zeros(dim);
    let mut log = Vec::with_capacity(cfg.rounds * shards.len());
    for round in 0..cfg.rounds {
        let results: Vec<(ModelParams, RoundLog)> = shards
            .par_iter()
            .enumerate()
            .map(|(site, shard)| {
                let p = local_train(shard, &global, cfg, site, round)?;
                let entry = log_entry(shard, &p, cfg, round, site);
                Ok((p, entry))
            })
            .collect::<Result<_>>()?;
        let (locals, entries): (Vec<_>, Vec<_>) = results.into_iter().unzip();
        log.extend(entries);
        global = aggregate(&locals, &sizes)?;
        if !global.is_finite() {
            return Err(Error::Divergence { round });
        }
    }
    Ok(TrainOutput { model: global, log })
}

/// Single-site training for `rounds * local_epochs` epochs, using the same
/// shuffling streams as site 0 of a federated run.
pub fn train_centralized(d: &EncodedDataset, cfg: &FLConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let mut p = ModelParams::zeros(d.dim());
    let mut log = Vec::with_capacity(cfg.rounds);
    for round in 0..cfg.rounds {
        p = local_train(d, &p, cfg, 0, round)?;
        log.push(log_entry(d, &p, cfg, round, 0));
    }
    Ok(TrainOutput { model: p, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flsim::ModelKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn separable(n: usize, seed: u64) -> EncodedDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut d = EncodedDataset::new(3);
        while d.len() < n {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let s = 2.0 * x[0] - x[1] + 0.3;
            if s.abs() < 0.1 {
                continue;
            }
            d.push(&x, s > 0.0).unwrap();
        }
        d
    }

    fn cfg(model: ModelKind) -> FLConfig {
        FLConfig {
            num_sites: 1,
            rounds: 5,
            local_epochs: 2,
            learning_rate: 0.1,
            l2: 1e-3,
            model,
            seed: 3,
            class_weighting: false,
        }
    }

    #[test]
    fn zero_epochs_is_identity() {
        let d = separable(20, 1);
        let g = ModelParams {
            weights: vec![0.5, -0.5, 1.0],
            bias: 0.2,
        };
        let c = FLConfig {
            local_epochs: 0,
            ..cfg(ModelKind::Logreg)
        };
        assert_eq!(local_train(&d, &g, &c, 0, 0).unwrap(), g);
    }

    #[test]
    fn perceptron_separates_separable_data() {
        let d = separable(200, 2);
        let c = FLConfig {
            rounds: 200,
            local_epochs: 1,
            l2: 0.0,
            ..cfg(ModelKind::Perceptron)
        };
        let p = train_centralized(&d, &c).unwrap().model;
        let mistakes = (0..d.len())
            .filter(|&i| (p.score(d.row(i)) > 0.0) != d.label(i))
            .count();
        assert_eq!(mistakes, 0);
    }

    #[test]
    fn one_site_federated_equals_centralized() {
        let d = separable(50, 4);
        for kind in ModelKind::ALL {
            let c = cfg(kind);
            let fed = train_federated(std::slice::from_ref(&d), &c).unwrap();
            let cen = train_centralized(&d, &c).unwrap();
            assert_eq!(fed.model, cen.model, "{kind}");
        }
    }

    #[test]
    fn federated_is_deterministic_and_logs_every_site() {
        let d = separable(300, 5);
        let shards: Vec<EncodedDataset> = (0..10)
            .map(|s| d.subset(&(s * 30..(s + 1) * 30).collect::<Vec<_>>()))
            .collect();
        let c = FLConfig {
            num_sites: 10,
            ..cfg(ModelKind::Svm)
        };
        let a = train_federated(&shards, &c).unwrap();
        let b = train_federated(&shards, &c).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.log.len(), 10 * c.rounds);
        assert!(a.log.iter().filter(|l| l.round == 0).count() == 10);
    }

    #[test]
    fn divergence_is_reported() {
        let mut d = EncodedDataset::new(1);
        d.push(&[1e308], true).unwrap();
        d.push(&[-1e308], false).unwrap();
        let c = FLConfig {
            learning_rate: 1e10,
            l2: 0.0,
            ..cfg(ModelKind::Svm)
        };
        assert!(matches!(train_centralized(&d, &c), Err(Error::Divergence { round: 0 })));
    }

    #[test]
    fn l2_keeps_norm_bounded() {
        let d = separable(100, 6);
        let mut c = cfg(ModelKind::Svm);
        c.l2 = 0.5;
        c.learning_rate = 0.01;
        let mut p = ModelParams::zeros(3);
        let mut max_norm: f64 = 0.0;
        for round in 0..200 {
            p = local_train(&d, &p, &c, 0, round).unwrap();
            max_norm = max_norm.max(p.weights.iter().map(|w| w * w).sum::<f64>().sqrt());
        }
        // hinge subgradients have norm <= |x| <= sqrt(3); fixed point norm <= that / l2
        assert!(max_norm <= 3f64.sqrt() / c.l2 + 1e-9, "{max_norm}");
    }
}
