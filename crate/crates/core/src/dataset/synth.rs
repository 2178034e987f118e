//! Seeded synthetic RT-datasets with a planted linear label signal.
//!
//! Every non-root hierarchy node receives a random effect; a record's score
//! is the sum of the effects along the root paths of its QID leaves and
//! items. Coarse nodes therefore carry signal that survives generalization
//! while leaf-level effects do not.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::{AttributeKind, AttributeSchema, Hierarchy, NodeId, RTDataset, Record, Schema};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericSpec {
    pub name: String,
    pub lo: i64,
    pub hi: i64,
    /// Band widths from finest to coarsest; each must divide the next.
    pub widths: Vec<i64>,
    /// Scale of the planted effects (0 makes the attribute pure noise).
    pub signal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalSpec {
    pub name: String,
    /// Fan-out per level, root first; the product is the leaf count.
    pub branching: Vec<usize>,
    pub signal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub records: usize,
    pub numeric: Vec<NumericSpec>,
    pub categorical: Vec<CategoricalSpec>,
    pub items_name: String,
    /// Item universe size.
    pub items: usize,
    pub item_branching: usize,
    /// Mean itemset size (at least 1).
    pub mean_items: f64,
    pub item_signal: f64,
    /// Scale of logistic label noise; 0 gives a deterministic threshold rule.
    pub noise: f64,
    /// Fraction of positive labels.
    pub positive_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            records: 5000,
            numeric: vec![NumericSpec {
                name: "age".into(),
                lo: 18,
                hi: 89,
                widths: vec![6, 18],
                signal: 1.0,
            }],
            categorical: vec![
                CategoricalSpec {
                    name: "gender".into(),
                    branching: vec![2],
                    signal: 0.5,
                },
                CategoricalSpec {
                    name: "region".into(),
                    branching: vec![4, 3],
                    signal: 1.0,
                },
                CategoricalSpec {
                    name: "insurance".into(),
                    branching: vec![3],
                    signal: 0.0,
                },
            ],
            items_name: "diagnoses".into(),
            items: 24,
            item_branching: 3,
            mean_items: 4.0,
            item_signal: 1.0,
            noise: 0.5,
            positive_rate: 0.3,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.records == 0 {
            return bad("records must be positive".into());
        }
        if self.items == 0 || self.item_branching < 2 {
            return bad("items must be positive and item_branching at least 2".into());
        }
        if self.mean_items.is_nan() || self.mean_items < 1.0 {
            return bad("mean_items must be at least 1".into());
        }
        if self.noise.is_nan() || self.noise < 0.0 || !(0.0..1.0).contains(&self.positive_rate) || self.positive_rate == 0.0 {
            return bad("noise must be >= 0 and positive_rate in (0,1)".into());
        }
        if self.numeric.is_empty() && self.categorical.is_empty() {
            return bad("at least one QID attribute is required".into());
        }
        for n in &self.numeric {
            if n.hi <= n.lo || n.widths.iter().any(|&w| w < 1) {
                return bad(format!("numeric `{}` needs lo < hi and positive widths", n.name));
            }
            if n.widths.windows(2).any(|w| w[1] % w[0] != 0) {
                return bad(format!("numeric `{}` widths must nest", n.name));
            }
        }
        for c in &self.categorical {
            if c.branching.is_empty() || c.branching.contains(&0) {
                return bad(format!("categorical `{}` needs positive branching", c.name));
            }
        }
        Ok(())
    }
}

fn numeric_hierarchy(spec: &NumericSpec) -> Result<Hierarchy> {
    let root = format!("[{}:{}]", spec.lo, spec.hi);
    let paths: Vec<Vec<String>> = (spec.lo..=spec.hi)
        .map(|v| {
            let mut p = vec![v.to_string()];
            for &w in &spec.widths {
                let start = spec.lo + (v - spec.lo) / w * w;
                let end = (start + w - 1).min(spec.hi);
                if w > 1 && (start, end) != (spec.lo, spec.hi) {
                    p.push(format!("[{start}:{end}]"));
                }
            }
            p.push(root.clone());
            p
        })
        .collect();
    Hierarchy::from_paths(&spec.name, &paths)
}

fn categorical_hierarchy(spec: &CategoricalSpec) -> Result<Hierarchy> {
    let total: usize = spec.branching.iter().product();
    let root = format!("{}-all", spec.name);
    let paths: Vec<Vec<String>> = (0..total)
        .map(|leaf| {
            // mixed-radix digits of the leaf index, root level first
            let mut digits = Vec::with_capacity(spec.branching.len());
            let mut rest = leaf;
            for &b in spec.branching.iter().rev() {
                digits.push(rest % b);
                rest /= b;
            }
            digits.reverse();
            let mut p: Vec<String> = (1..=digits.len())
                .rev()
                .map(|depth| {
                    let tag: Vec<String> = digits[..depth].iter().map(|d| d.to_string()).collect();
                    format!("{}-{}", spec.name, tag.join("."))
                })
                .collect();
            p.push(root.clone());
            p
        })
        .collect();
    Hierarchy::from_paths(&spec.name, &paths)
}

fn item_hierarchy(name: &str, items: usize, branching: usize) -> Result<Hierarchy> {
    let width = (items - 1).to_string().len().max(2);
    let mut paths: Vec<Vec<String>> = (0..items).map(|i| vec![format!("I{i:0width$}")]).collect();
    let mut groups = items;
    let mut level = 1;
    while groups > branching {
        let span = branching.pow(level);
        for (i, p) in paths.iter_mut().enumerate() {
            p.push(format!("IG{level}-{}", i / span));
        }
        groups = groups.div_ceil(branching);
        level += 1;
    }
    for p in &mut paths {
        p.push("I*".into());
    }
    Hierarchy::from_paths(name, &paths)
}

/// Random effect for every non-root node, scaled by `signal`.
fn plant(h: &Hierarchy, signal: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    (0..h.len())
        .map(|n| if n == h.root() { 0.0 } else { signal * normal.sample(rng) })
        .collect()
}

fn path_effect(h: &Hierarchy, effects: &[f64], leaf: NodeId) -> f64 {
    h.path_to_root(leaf).map(|n| effects[n]).sum()
}

/// Generates a dataset deterministically from `(config, seed)`.
pub fn synth_generate(config: &SynthConfig, seed: u64) -> Result<RTDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut attributes = Vec::new();
    let mut hierarchies = BTreeMap::new();
    let mut signals = BTreeMap::new();
    for n in &config.numeric {
        attributes.push(AttributeSchema {
            name: n.name.clone(),
            kind: AttributeKind::Numeric,
            is_qid: true,
            hierarchy: None,
        });
        hierarchies.insert(n.name.clone(), numeric_hierarchy(n)?);
        signals.insert(n.name.clone(), n.signal);
    }
    for c in &config.categorical {
        attributes.push(AttributeSchema {
            name: c.name.clone(),
            kind: AttributeKind::Categorical,
            is_qid: true,
            hierarchy: None,
        });
        hierarchies.insert(c.name.clone(), categorical_hierarchy(c)?);
        signals.insert(c.name.clone(), c.signal);
    }
    attributes.push(AttributeSchema {
        name: config.items_name.clone(),
        kind: AttributeKind::Transactional,
        is_qid: true,
        hierarchy: None,
    });
    hierarchies.insert(
        config.items_name.clone(),
        item_hierarchy(&config.items_name, config.items, config.item_branching)?,
    );
    let schema = Arc::new(Schema::new(attributes, hierarchies)?);

    let qid_effects: Vec<Vec<f64>> = schema
        .qids()
        .iter()
        .map(|q| plant(&q.hierarchy, signals[&q.name], &mut rng))
        .collect();
    let items_h = schema.items();
    let item_effects = plant(items_h, config.item_signal, &mut rng);

    let popularity: Vec<f64> = (0..config.items).map(|i| 1.0 / ((i + 1) as f64).sqrt()).collect();
    let extra_items = Poisson::new(config.mean_items - 1.0).ok();

    let mut records = Vec::with_capacity(config.records);
    let mut scores = Vec::with_capacity(config.records);
    for id in 1..=config.records as u64 {
        let qid: Vec<NodeId> = schema
            .qids()
            .iter()
            .map(|q| {
                let leaves = q.hierarchy.leaves();
                leaves[rng.random_range(0..leaves.len())]
            })
            .collect();

        let extra = extra_items.map(|p| p.sample(&mut rng) as usize).unwrap_or(0);
        let size = (1 + extra).min(config.items);
        let mut weights = popularity.clone();
        let mut items = BTreeSet::new();
        while items.len() < size {
            let dist = WeightedIndex::new(&weights).unwrap();
            let pick = dist.sample(&mut rng);
            weights[pick] = 0.0;
            items.insert(items_h.leaves()[pick]);
        }

        let mut score: f64 = qid
            .iter()
            .zip(schema.qids())
            .zip(&qid_effects)
            .map(|((&v, q), eff)| path_effect(&q.hierarchy, eff, v))
            .sum();
        score += items.iter().map(|&i| path_effect(items_h, &item_effects, i)).sum::<f64>();
        if config.noise > 0.0 {
            let u: f64 = rng.random_range(1e-12..1.0 - 1e-12);
            score += config.noise * (u / (1.0 - u)).ln();
        }
        scores.push(score);
        records.push(Record {
            id,
            qid,
            items,
            label: false,
            extra: Vec::new(),
        });
    }

    let mut sorted = scores.clone();
    sorted.sort_by(f64::total_cmp);
    let positives = ((config.records as f64) * config.positive_rate).round() as usize;
    let positives = positives.clamp(1, config.records);
    let cut = config.records - positives;
    let threshold = if cut == 0 {
        f64::NEG_INFINITY
    } else {
        (sorted[cut - 1] + sorted[cut]) / 2.0
    };
    for (r, s) in records.iter_mut().zip(&scores) {
        r.label = *s > threshold;
    }
    Ok(RTDataset::new(schema, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::write_dataset;

    fn small() -> SynthConfig {
        SynthConfig {
            records: 300,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic_bytes() {
        let a = synth_generate(&small(), 7).unwrap();
        let b = synth_generate(&small(), 7).unwrap();
        let (mut x, mut y) = (Vec::new(), Vec::new());
        write_dataset(&mut x, &a.schema, &a.records).unwrap();
        write_dataset(&mut y, &b.schema, &b.records).unwrap();
        assert_eq!(x, y);
        let c = synth_generate(&small(), 8).unwrap();
        assert_ne!(a.records, c.records);
    }

    #[test]
    fn zero_records_is_config_error() {
        let cfg = SynthConfig { records: 0, ..small() };
        assert!(matches!(synth_generate(&cfg, 1), Err(Error::Config(_))));
    }

    #[test]
    fn hierarchies_are_well_formed() {
        let d = synth_generate(&small(), 1).unwrap();
        let age = &d.schema.qids()[0].hierarchy;
        assert!(age.is_numeric());
        assert_eq!(age.num_leaves(), 72);
        assert_eq!(age.label(age.root()), "[18:89]");
        let region = &d.schema.qids()[2].hierarchy;
        assert_eq!(region.num_leaves(), 12);
        assert_eq!(region.children(region.root()).len(), 4);
        let items = d.schema.items();
        assert_eq!(items.num_leaves(), 24);
        assert!(d.records.iter().all(|r| !r.items.is_empty() && r.is_raw(&d.schema)));
    }

    #[test]
    fn positive_rate_respected() {
        let d = synth_generate(&small(), 3).unwrap();
        assert_eq!(d.positives(), 90);
    }
}
