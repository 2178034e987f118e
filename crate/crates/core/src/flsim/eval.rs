use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::train::train_centralized;
use super::{mix, EncodedDataset, FLConfig, ModelParams};
use crate::error::{Error, Result};

/// Positive-class prediction: score above zero.
pub fn predict(model: &ModelParams, x: &[f64]) -> bool {
    model.score(x) > 0.0
}

/// `(tp, fp, fn, tn)` over an encoded dataset.
pub fn confusion(model: &ModelParams, d: &EncodedDataset) -> (usize, usize, usize, usize) {
    let mut c = (0, 0, 0, 0);
    for i in 0..d.len() {
        match (predict(model, d.row(i)), d.label(i)) {
            (true, true) => c.0 += 1,
            (true, false) => c.1 += 1,
            (false, true) => c.2 += 1,
            (false, false) => c.3 += 1,
        }
    }
    c
}

/// F1 of the positive class; zero when precision + recall is zero.
pub fn f1_score(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if tp == 0 || denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

pub(crate) fn f1_on(model: &ModelParams, d: &EncodedDataset) -> f64 {
    let (tp, fp, fn_, _) = confusion(model, d);
    f1_score(tp, fp, fn_)
}

pub fn evaluate_f1(model: &ModelParams, test: &EncodedDataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::contract("F1 on an empty test set"));
    }
    if test.dim() != model.dim() {
        return Err(Error::LengthMismatch {
            expected: model.dim(),
            found: test.dim(),
        });
    }
    Ok(f1_on(model, test))
}

fn shuffled_by_class(labels: &[bool], seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    (pos, neg)
}

/// Stratified split; returns `(train, test)` index lists, each sorted.
pub fn holdout_split(labels: &[bool], test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::contract(format!("test fraction {test_fraction} outside [0,1)")));
    }
    let (pos, neg) = shuffled_by_class(labels, seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [pos, neg] {
        let n_test = (class.len() as f64 * test_fraction).round() as usize;
        test.extend_from_slice(&class[..n_test]);
        train.extend_from_slice(&class[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Stratified folds over `0..labels.len()`, each sorted.
pub fn kfold(labels: &[bool], folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 || folds > labels.len() {
        return Err(Error::contract(format!("{folds} folds over {} samples", labels.len())));
    }
    let (pos, neg) = shuffled_by_class(labels, seed);
    let mut out = vec![Vec::new(); folds];
    for (j, i) in pos.into_iter().chain(neg).enumerate() {
        out[j % folds].push(i);
    }
    out.iter_mut().for_each(|f| f.sort_unstable());
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub fold_f1: Vec<f64>,
    pub holdout_f1: f64,
    /// Model trained on the whole training split.
    pub model: ModelParams,
}

impl CvReport {
    pub fn mean_fold_f1(&self) -> f64 {
        self.fold_f1.iter().sum::<f64>() / self.fold_f1.len().max(1) as f64
    }
}

/// Per-fold F1 of centralized models under stratified `folds`-fold
/// cross-validation of `train`.
pub fn kfold_f1(train: &EncodedDataset, cfg: &FLConfig, folds: usize) -> Result<Vec<f64>> {
    let parts = kfold(train.labels(), folds, mix(cfg.seed))?;
    let mut fold_f1 = Vec::with_capacity(folds);
    for (f, held) in parts.iter().enumerate() {
        let rest: Vec<usize> = parts
            .iter()
            .enumerate()
            .filter(|&(g, _)| g != f)
            .flat_map(|(_, p)| p.iter().copied())
            .collect();
        let model = train_centralized(&train.subset(&rest), cfg)?.model;
        // a fold without positives scores 0 by definition
        fold_f1.push(evaluate_f1(&model, &train.subset(held))?);
    }
    Ok(fold_f1)
}

/// 70/30 stratified holdout; `folds`-fold cross-validation on the 70% and
/// a final centralized model scored on the 30%.
pub fn cross_validate(d: &EncodedDataset, cfg: &FLConfig, folds: usize) -> Result<CvReport> {
    let (train_idx, test_idx) = holdout_split(d.labels(), 0.3, cfg.seed)?;
    let train = d.subset(&train_idx);
    let test = d.subset(&test_idx);
    let fold_f1 = kfold_f1(&train, cfg, folds)?;
    let model = train_centralized(&train, cfg)?.model;
    let holdout_f1 = evaluate_f1(&model, &test)?;
    Ok(CvReport {
        fold_f1,
        holdout_f1,
        model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f1_arithmetic() {
        assert!((f1_score(2, 1, 1) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(f1_score(5, 0, 0), 1.0);
        assert_eq!(f1_score(0, 3, 4), 0.0);
        assert_eq!(f1_score(0, 0, 0), 0.0);
    }

    #[test]
    fn f1_of_trivial_predictors() {
        let d = EncodedDataset::from_rows(vec![vec![1.0], vec![-1.0], vec![2.0]], vec![true, false, true]).unwrap();
        let perfect = ModelParams {
            weights: vec![1.0],
            bias: 0.0,
        };
        assert_eq!(evaluate_f1(&perfect, &d).unwrap(), 1.0);
        let negative = ModelParams {
            weights: vec![0.0],
            bias: -1.0,
        };
        assert_eq!(evaluate_f1(&negative, &d).unwrap(), 0.0);
        assert!(evaluate_f1(&perfect, &EncodedDataset::new(1)).is_err());
    }

    #[test]
    fn splits_partition_and_stratify() {
        let labels: Vec<bool> = (0..100).map(|i| i % 4 == 0).collect();
        let (tr, te) = holdout_split(&labels, 0.3, 9).unwrap();
        assert_eq!(tr.len() + te.len(), 100);
        assert_eq!(te.iter().filter(|&&i| labels[i]).count(), 8);
        let mut all = [tr.clone(), te].concat();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());

        let folds = kfold(&labels, 5, 1).unwrap();
        let mut all = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert!(folds.iter().all(|f| f.len() == 20));
        assert_eq!(folds, kfold(&labels, 5, 1).unwrap());
        assert!(kfold(&labels, 1, 0).is_err());
    }
}
