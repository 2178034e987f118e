//! Fixtures, generators and brute-force oracles shared by the integration
//! tests and the acceptance suite.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::Arc;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use synfl::dataset::{load_dataset, load_generalized, load_schema, CategoricalSpec, NumericSpec, SynthConfig};
use synfl::{Hierarchy, NodeId, RTDataset, Record, Schema};

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/worked")
}

/// Schema, raw table and published table of the worked example.
pub fn worked_fixture() -> (Arc<Schema>, RTDataset, RTDataset) {
    let dir = fixture_dir();
    let schema = load_schema(&dir.join("schema.toml")).expect("fixture schema");
    let raw = load_dataset(&dir.join("raw.csv"), &schema).expect("fixture raw table");
    let published = load_generalized(&dir.join("published.csv"), &schema).expect("fixture published table");
    (schema, raw, published)
}

pub fn node(h: &Hierarchy, label: &str) -> NodeId {
    h.lookup(label).unwrap_or_else(|| panic!("no node `{label}` in {}", h.name()))
}

/// Leaf labels under every node label, read off the serialized root paths
/// (one line per leaf) rather than the tree structure.
pub struct LeafIndex {
    pub total: usize,
    pub under: BTreeMap<String, BTreeSet<String>>,
}

impl LeafIndex {
    pub fn new(h: &Hierarchy) -> Self {
        let mut under: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        let mut total = 0;
        for line in h.to_text().lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#')) {
            let parts: Vec<&str> = line.split('|').map(str::trim).collect();
            total += 1;
            for p in &parts {
                under.entry(p.to_string()).or_default().insert(parts[0].to_string());
            }
        }
        LeafIndex { total, under }
    }

    pub fn count(&self, label: &str) -> usize {
        self.under.get(label).map_or(0, BTreeSet::len)
    }

    pub fn covers(&self, ancestor: &str, leaf: &str) -> bool {
        self.under.get(ancestor).is_some_and(|s| s.contains(leaf))
    }
}

/// Literal per-attribute NCP: covered leaves over all leaves, 0 for one.
pub fn oracle_ncp_value(idx: &LeafIndex, label: &str) -> f64 {
    let c = idx.count(label);
    if c == 1 {
        0.0
    } else {
        c as f64 / idx.total as f64
    }
}

pub fn oracle_ncp_record(schema: &Schema, idx: &[LeafIndex], r: &Record, w: &[f64]) -> f64 {
    schema
        .qids()
        .iter()
        .enumerate()
        .map(|(i, q)| w[i] * oracle_ncp_value(&idx[i], q.hierarchy.label(r.qid[i])))
        .sum()
}

/// Record UL with unit item weights: sum of (2^c - 1) over the items, over
/// 2^sigma - 1 where sigma adds up every item's leaf count.
pub fn oracle_ul_record(schema: &Schema, items_idx: &LeafIndex, r: &Record) -> f64 {
    let h = schema.items();
    let counts: Vec<i32> = r.items.iter().map(|&u| items_idx.count(h.label(u)) as i32).collect();
    let sigma: i32 = counts.iter().sum();
    if sigma == 0 {
        return 0.0;
    }
    let num: f64 = counts.iter().map(|&c| 2f64.powi(c) - 1.0).sum();
    num / (2f64.powi(sigma) - 1.0)
}

/// Leaf labels a generalized itemset covers.
pub fn covered_leaves(schema: &Schema, items_idx: &LeafIndex, items: &BTreeSet<NodeId>) -> BTreeSet<String> {
    items
        .iter()
        .flat_map(|&u| items_idx.under[schema.items().label(u)].iter().cloned())
        .collect()
}

/// A random generator configuration: 50-500 records, 5-30 items.
pub fn random_synth(rng: &mut ChaCha8Rng) -> SynthConfig {
    let records = rng.random_range(50..=500);
    let items = rng.random_range(5..=30);
    let mut categorical = vec![CategoricalSpec {
        name: "gender".into(),
        branching: vec![2],
        signal: 0.5,
    }];
    if rng.random_bool(0.7) {
        categorical.push(CategoricalSpec {
            name: "region".into(),
            branching: vec![rng.random_range(2..=4), rng.random_range(2..=3)],
            signal: 1.0,
        });
    }
    SynthConfig {
        records,
        numeric: vec![NumericSpec {
            name: "age".into(),
            lo: 18,
            hi: rng.random_range(40..=89),
            widths: vec![5, 20],
            signal: 1.0,
        }],
        categorical,
        items,
        item_branching: rng.random_range(2..=4),
        mean_items: rng.random_range(1.0..4.0),
        ..SynthConfig::default()
    }
}

/// A random generalized record: any node per QID, 0-5 arbitrary item nodes.
pub fn random_generalized(schema: &Schema, rng: &mut ChaCha8Rng, id: u64) -> Record {
    let qid = schema.qids().iter().map(|q| rng.random_range(0..q.hierarchy.len())).collect();
    let h = schema.items();
    let n = rng.random_range(0..=5);
    let items = (0..n).map(|_| rng.random_range(0..h.len())).collect();
    Record {
        id,
        qid,
        items,
        label: rng.random_bool(0.5),
        extra: Vec::new(),
    }
}

/// Generalization soundness of `out` against `raw` (matched by id): every
/// QID value covers the original, every original item is covered, and
/// every generalized item covers at least one original item.
pub fn soundness_errors(schema: &Schema, raw: &[Record], out: &[Record]) -> Vec<String> {
    let qidx: Vec<LeafIndex> = schema.qids().iter().map(|q| LeafIndex::new(&q.hierarchy)).collect();
    let iidx = LeafIndex::new(schema.items());
    let by_id: BTreeMap<u64, &Record> = raw.iter().map(|r| (r.id, r)).collect();
    let mut errs = Vec::new();
    if raw.len() != out.len() {
        errs.push(format!("{} records in, {} out", raw.len(), out.len()));
    }
    for g in out {
        let Some(r) = by_id.get(&g.id) else {
            errs.push(format!("unknown record id {}", g.id));
            continue;
        };
        if g.label != r.label {
            errs.push(format!("record {}: label changed", g.id));
        }
        for (i, q) in schema.qids().iter().enumerate() {
            let h = &q.hierarchy;
            if !qidx[i].covers(h.label(g.qid[i]), h.label(r.qid[i])) {
                errs.push(format!("record {}: {} does not cover {}", g.id, h.label(g.qid[i]), h.label(r.qid[i])));
            }
        }
        let covered = covered_leaves(schema, &iidx, &g.items);
        let h = schema.items();
        for &u in &r.items {
            if !covered.contains(h.label(u)) {
                errs.push(format!("record {}: item {} lost", g.id, h.label(u)));
            }
        }
        for &u in &g.items {
            if !iidx.under[h.label(u)].iter().any(|l| r.items.iter().any(|&o| h.label(o) == l)) {
                errs.push(format!("record {}: item {} covers no original item", g.id, h.label(u)));
            }
        }
    }
    errs
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
