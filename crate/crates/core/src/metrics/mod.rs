//! Information loss of generalized data.
//!
//! Relational loss is the normalized certainty penalty (NCP): a value
//! covering `c` of an attribute's `|R|` leaves costs `c/|R|` (zero for a
//! leaf), weighted per attribute and averaged over records. Transactional
//! loss is the utility loss (UL): a generalized item covering `c` leaves
//! costs `(2^c - 1) * w`, a record's UL divides the sum by `2^σ - 1` where
//! σ is the total size of its items, and the dataset UL is the mean.

mod importance;

use std::collections::BTreeMap;

use crate::dataset::{Hierarchy, NodeId, Record, Schema};
use crate::error::{Error, Result};
use crate::mapping::{is_legitimate, EquivalenceClass};

pub use importance::{feature_importance, FeatureImportance, ImportanceConfig};

/// Attribute and item weights used by the loss functions.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    names: Vec<String>,
    relational: Vec<f64>,
    items: BTreeMap<NodeId, f64>,
}

impl WeightVector {
    /// Equal relational weights summing to one; every item weight is one.
    pub fn uniform(schema: &Schema) -> Self {
        let n = schema.qids().len();
        WeightVector {
            names: schema.qids().iter().map(|q| q.name.clone()).collect(),
            relational: vec![1.0 / n as f64; n],
            items: BTreeMap::new(),
        }
    }

    /// Relational weights aligned with [`Schema::qids`], normalized to sum to
    /// one. All-zero input falls back to uniform weights.
    pub fn from_relational(schema: &Schema, weights: &[f64]) -> Result<Self> {
        if weights.len() != schema.qids().len() {
            return Err(Error::contract(format!(
                "{} weights for {} QID attributes",
                weights.len(),
                schema.qids().len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::contract("weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Ok(Self::uniform(schema));
        }
        Ok(WeightVector {
            names: schema.qids().iter().map(|q| q.name.clone()).collect(),
            relational: weights.iter().map(|w| w / total).collect(),
            items: BTreeMap::new(),
        })
    }

    pub fn with_item_weight(mut self, node: NodeId, weight: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&weight) {
            return Err(Error::contract(format!("item weight {weight} outside [0,1]")));
        }
        self.items.insert(node, weight);
        Ok(self)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn relational(&self) -> &[f64] {
        &self.relational
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.relational[i])
    }

    pub fn item(&self, node: NodeId) -> f64 {
        self.items.get(&node).copied().unwrap_or(1.0)
    }
}

/// NCP of a single generalized value.
pub fn ncp_value(h: &Hierarchy, v: NodeId) -> f64 {
    let covered = h.leaf_count(v);
    if covered <= 1 {
        0.0
    } else {
        covered as f64 / h.num_leaves() as f64
    }
}

/// Weighted NCP of a QID tuple aligned with [`Schema::qids`].
pub fn ncp_tuple(schema: &Schema, tuple: &[NodeId], w: &WeightVector) -> Result<f64> {
    if w.relational.len() != schema.qids().len() || tuple.len() != schema.qids().len() {
        return Err(Error::contract("weight vector does not cover every QID attribute"));
    }
    Ok(tuple
        .iter()
        .zip(schema.qids())
        .zip(&w.relational)
        .map(|((&v, q), wi)| wi * ncp_value(&q.hierarchy, v))
        .sum())
}

pub fn ncp_record(schema: &Schema, r: &Record, w: &WeightVector) -> Result<f64> {
    ncp_tuple(schema, &r.qid, w)
}

/// Mean record NCP (u_R).
pub fn ncp_dataset(schema: &Schema, records: &[Record], w: &WeightVector) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::contract("NCP of an empty dataset"));
    }
    let mut total = 0.0;
    for r in records {
        total += ncp_record(schema, r, w)?;
    }
    Ok(total / records.len() as f64)
}

/// UL of one generalized item.
pub fn ul_item(h: &Hierarchy, u: NodeId, w: &WeightVector) -> Result<f64> {
    let size = h.leaf_count(u);
    if size > 62 {
        return Err(Error::Overflow(size));
    }
    Ok(((1u64 << size) - 1) as f64 * w.item(u))
}

/// UL of a record's itemset; zero for an empty itemset.
pub fn ul_items<'a>(h: &Hierarchy, items: impl IntoIterator<Item = &'a NodeId>, w: &WeightVector) -> Result<f64> {
    let mut sum = 0.0;
    let mut sigma = 0usize;
    for &u in items {
        sum += ul_item(h, u, w)?;
        sigma += h.leaf_count(u);
    }
    if sigma == 0 {
        return Ok(0.0);
    }
    if sigma > 1000 {
        return Err(Error::Overflow(sigma));
    }
    Ok(sum / ((sigma as f64).exp2() - 1.0))
}

pub fn ul_record(schema: &Schema, r: &Record, w: &WeightVector) -> Result<f64> {
    ul_items(schema.items(), &r.items, w)
}

/// Mean record UL (u_T).
pub fn ul_dataset(schema: &Schema, records: &[Record], w: &WeightVector) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::contract("UL of an empty dataset"));
    }
    let mut total = 0.0;
    for r in records {
        total += ul_record(schema, r, w)?;
    }
    Ok(total / records.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordLoss {
    pub id: u64,
    pub ncp: f64,
    pub ul: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub u_r: f64,
    pub u_t: f64,
    pub per_record: Vec<RecordLoss>,
}

pub fn loss_report(schema: &Schema, records: &[Record], w: &WeightVector) -> Result<LossReport> {
    if records.is_empty() {
        return Err(Error::contract("loss report of an empty dataset"));
    }
    let per_record = records
        .iter()
        .map(|r| {
            Ok(RecordLoss {
                id: r.id,
                ncp: ncp_record(schema, r, w)?,
                ul: ul_record(schema, r, w)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = per_record.len() as f64;
    Ok(LossReport {
        u_r: per_record.iter().map(|l| l.ncp).sum::<f64>() / n,
        u_t: per_record.iter().map(|l| l.ul).sum::<f64>() / n,
        per_record,
    })
}

/// Loss of placing sample `t` under equivalence class `class`.
///
/// The relational part is the NCP of the joint generalization of `t` and the
/// class tuple. The transactional part charges, for every item of the class
/// signature, the UL exceeding what `t`'s own items under it already cost,
/// normalized like a record UL over the signature. A class whose values all
/// equal `t`'s values therefore costs zero.
pub fn combined_mapping_loss(schema: &Schema, t: &Record, class: &EquivalenceClass, w: &WeightVector) -> Result<f64> {
    if !is_legitimate(schema, t, class) {
        return Err(Error::contract(format!("class {} is not legitimate for sample {}", class.id, t.id)));
    }
    let joint: Vec<NodeId> = t
        .qid
        .iter()
        .zip(&class.relational)
        .zip(schema.qids())
        .map(|((&a, &b), q)| q.hierarchy.lca(a, b))
        .collect();
    let relational = ncp_tuple(schema, &joint, w)?;

    let h = schema.items();
    let mut excess = 0.0;
    let mut sigma = 0usize;
    for &u in &class.item_signature {
        let own: f64 = t
            .items
            .iter()
            .filter(|&&x| h.covers(u, x))
            .map(|&x| ul_item(h, x, w))
            .sum::<Result<f64>>()?;
        excess += (ul_item(h, u, w)? - own).max(0.0);
        sigma += h.leaf_count(u);
    }
    let transactional = if sigma == 0 {
        0.0
    } else {
        excess / ((sigma as f64).exp2() - 1.0)
    };
    Ok(relational + transactional)
}

/// The `top_n` QID attributes by weight, heaviest first. Ties go to the
/// lexicographically smaller name; `top_n` beyond the QID count keeps all.
pub fn select_qids(w: &WeightVector, top_n: usize) -> Result<Vec<String>> {
    if top_n == 0 {
        return Err(Error::contract("top_n must be at least 1"));
    }
    let mut order: Vec<(f64, &String)> = w.relational.iter().copied().zip(&w.names).collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    Ok(order.into_iter().take(top_n).map(|(_, n)| n.clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::testkit;

    #[test]
    fn ncp_value_cases() {
        let s = testkit::schema();
        let place = &s.qids()[2].hierarchy;
        assert_eq!(ncp_value(place, place.lookup("France").unwrap()), 0.0);
        assert_eq!(ncp_value(place, place.lookup("Europe").unwrap()), 0.5);
        assert_eq!(ncp_value(place, place.root()), 1.0);
    }

    #[test]
    fn ncp_record_arithmetic() {
        let s = testkit::schema();
        let w = WeightVector::uniform(&s);
        let raw = testkit::raw_records(&s);
        assert_eq!(ncp_record(&s, &raw[0], &w).unwrap(), 0.0);

        // age [21:40] covers 3 of 7 leaves, gender All 1.0, place France 0
        let r = testkit::rec(&s, 9, ["[21:40]", "All", "France"], &["A"], true);
        let expect = (3.0 / 7.0 + 1.0 + 0.0) / 3.0;
        assert!((ncp_record(&s, &r, &w).unwrap() - expect).abs() < 1e-12);

        let mut short = w.clone();
        short.relational.pop();
        assert!(ncp_record(&s, &r, &short).is_err());
    }

    #[test]
    fn ncp_dataset_mean() {
        let s = testkit::schema();
        let w = WeightVector::uniform(&s);
        assert_eq!(ncp_dataset(&s, &testkit::raw_records(&s), &w).unwrap(), 0.0);
        assert!(ncp_dataset(&s, &[], &w).is_err());
    }

    #[test]
    fn ul_cases() {
        let s = testkit::schema();
        let h = s.items();
        let w = WeightVector::uniform(&s);
        let cdef = h.parse_item_token("(C,D,E,F)").unwrap();
        let a = h.lookup("A").unwrap();
        assert_eq!(ul_item(h, cdef, &w).unwrap(), 15.0);
        assert_eq!(ul_item(h, a, &w).unwrap(), 1.0);
        let w0 = w.clone().with_item_weight(a, 0.0).unwrap();
        assert_eq!(ul_item(h, a, &w0).unwrap(), 0.0);

        let r = testkit::rec(&s, 1, ["24", "Male", "France"], &["A"], true);
        assert_eq!(ul_record(&s, &r, &w).unwrap(), 1.0);
        let r = testkit::rec(&s, 1, ["24", "Male", "France"], &["A", "B", "(C,D,E,F)"], true);
        assert!((ul_record(&s, &r, &w).unwrap() - 17.0 / 63.0).abs() < 1e-15);
        let r = testkit::rec(&s, 1, ["24", "Male", "France"], &[], true);
        assert_eq!(ul_record(&s, &r, &w).unwrap(), 0.0);
        assert!(ul_dataset(&s, &[], &w).is_err());
    }

    #[test]
    fn ul_overflow_guard() {
        let lines: String = (0..70).map(|i| format!("x{i}|all\n")).collect();
        let h = Hierarchy::parse("big", &lines).unwrap();
        let s = testkit::schema();
        let w = WeightVector::uniform(&s);
        assert!(matches!(ul_item(&h, h.root(), &w), Err(Error::Overflow(70))));
    }

    #[test]
    fn select_qids_cases() {
        let s = testkit::schema();
        let w = WeightVector::from_relational(&s, &[0.7, 0.2, 0.1]).unwrap();
        assert_eq!(select_qids(&w, 1).unwrap(), vec!["age"]);
        assert_eq!(select_qids(&w, 3).unwrap(), vec!["age", "gender", "place"]);
        assert_eq!(select_qids(&w, 9).unwrap().len(), 3);
        let tie = WeightVector::from_relational(&s, &[0.2, 0.4, 0.4]).unwrap();
        assert_eq!(select_qids(&tie, 1).unwrap(), vec!["gender"]);
        assert!(select_qids(&w, 0).is_err());
    }

    #[test]
    fn weights_normalize() {
        let s = testkit::schema();
        let w = WeightVector::from_relational(&s, &[2.0, 1.0, 1.0]).unwrap();
        assert_eq!(w.relational(), &[0.5, 0.25, 0.25]);
        assert_eq!(w.get("gender"), Some(0.25));
        assert!(WeightVector::from_relational(&s, &[1.0]).is_err());
        assert_eq!(WeightVector::from_relational(&s, &[0.0; 3]).unwrap(), WeightVector::uniform(&s));
    }
}
