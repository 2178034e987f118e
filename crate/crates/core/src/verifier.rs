//! Brute-force audit of k-anonymity, k^m-anonymity and their combination.
//!
//! An attacker item is an original (leaf) item. It matches a record when it
//! lies in the subtree of one of the record's generalized items. Leaf
//! expansion is done here from the raw tree structure, independently of the
//! anonymizer, so the verifier can serve as its oracle.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;

use crate::dataset::{Hierarchy, NodeId, Record, Schema};
use crate::error::{Error, Result};

/// Default cap on combination checks per verification.
pub const DEFAULT_BUDGET: u64 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ViolationKind {
    KAnonymity,
    KmAnonymity,
    Combined,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViolationKind::KAnonymity => "k-anonymity",
            ViolationKind::KmAnonymity => "km-anonymity",
            ViolationKind::Combined => "combined",
        })
    }
}

/// A QID tuple and/or original-item combination matched by `0 < n < k`
/// records.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct ViolationReport {
    pub kind: ViolationKind,
    pub qid: Option<Vec<NodeId>>,
    /// Original item leaves, ascending by node id.
    pub items: Vec<NodeId>,
    pub match_count: usize,
}

impl ViolationReport {
    /// Human-readable witness such as `age=[21:40] gender=All | A;D`.
    pub fn witness(&self, schema: &Schema) -> String {
        let mut parts = Vec::new();
        if let Some(q) = &self.qid {
            let vals: Vec<String> = schema
                .qids()
                .iter()
                .zip(q)
                .map(|(a, &v)| format!("{}={}", a.name, a.hierarchy.label(v)))
                .collect();
            parts.push(vals.join(" "));
        }
        if !self.items.is_empty() {
            let items: Vec<&str> = self.items.iter().map(|&i| schema.items().label(i)).collect();
            parts.push(items.join(";"));
        }
        parts.join(" | ")
    }
}

fn expand(h: &Hierarchy, node: NodeId, out: &mut Vec<NodeId>) {
    let kids = h.children(node);
    if kids.is_empty() {
        out.push(node);
    } else {
        for &c in kids {
            expand(h, c, out);
        }
    }
}

/// Original leaves matched by a generalized itemset, sorted and deduplicated.
fn leaf_set(h: &Hierarchy, items: impl IntoIterator<Item = NodeId>) -> Vec<NodeId> {
    let mut out = Vec::new();
    for u in items {
        expand(h, u, &mut out);
    }
    out.sort_unstable();
    out.dedup();
    out
}

struct Budget {
    limit: u64,
    used: u64,
}

impl Budget {
    fn charge(&mut self, n: u64) -> Result<()> {
        self.used = self.used.saturating_add(n);
        if self.used > self.limit {
            Err(Error::BudgetExceeded { budget: self.limit })
        } else {
            Ok(())
        }
    }
}

fn binomial_sum(n: usize, m: usize) -> u64 {
    let mut total = 0u64;
    let mut c = 1u64;
    for j in 1..=m.min(n) {
        c = c.saturating_mul((n - j + 1) as u64) / j as u64;
        total = total.saturating_add(c);
    }
    total
}

/// Support of every combination of at most `m` leaves drawn from some
/// record's leaf set. Combinations absent from the map match no record.
fn combination_support(sets: &[Vec<NodeId>], m: usize, budget: &mut Budget) -> Result<BTreeMap<Vec<NodeId>, usize>> {
    let mut counts: HashMap<Vec<NodeId>, usize> = HashMap::new();
    for s in sets {
        budget.charge(binomial_sum(s.len(), m))?;
        let mut stack: Vec<(usize, Vec<NodeId>)> = vec![(0, Vec::new())];
        while let Some((start, combo)) = stack.pop() {
            for (i, &u) in s.iter().enumerate().skip(start) {
                let mut next = combo.clone();
                next.push(u);
                *counts.entry(next.clone()).or_insert(0) += 1;
                if next.len() < m {
                    stack.push((i + 1, next));
                }
            }
        }
    }
    Ok(counts.into_iter().collect())
}

/// Groups of records sharing an exact generalized QID tuple that are
/// smaller than `k`.
pub fn verify_k_anonymity(records: &[Record], k: usize) -> Vec<ViolationReport> {
    let mut groups: BTreeMap<&[NodeId], usize> = BTreeMap::new();
    for r in records {
        *groups.entry(&r.qid).or_insert(0) += 1;
    }
    groups
        .into_iter()
        .filter(|&(_, n)| n < k)
        .map(|(q, n)| ViolationReport {
            kind: ViolationKind::KAnonymity,
            qid: Some(q.to_vec()),
            items: Vec::new(),
            match_count: n,
        })
        .collect()
}

/// Combinations of at most `m` original items matched by fewer than `k`
/// (but at least one) records of the whole dataset.
pub fn verify_km(schema: &Schema, records: &[Record], k: usize, m: usize, budget: u64) -> Result<Vec<ViolationReport>> {
    if m == 0 {
        return Err(Error::contract("m must be at least 1"));
    }
    let h = schema.items();
    let sets: Vec<Vec<NodeId>> = records.iter().map(|r| leaf_set(h, r.items.iter().copied())).collect();
    let mut b = Budget { limit: budget, used: 0 };
    Ok(combination_support(&sets, m, &mut b)?
        .into_iter()
        .filter(|&(_, n)| n < k)
        .map(|(items, n)| ViolationReport {
            kind: ViolationKind::KmAnonymity,
            qid: None,
            items,
            match_count: n,
        })
        .collect())
}

/// Attackers knowing a record's QID tuple plus at most `m` of its items.
/// Reports k-anonymity violations of the tuples and, within every tuple
/// group, item combinations matched by fewer than `k` records.
pub fn verify_k_km(schema: &Schema, records: &[Record], k: usize, m: usize, budget: u64) -> Result<Vec<ViolationReport>> {
    if m == 0 {
        return Err(Error::contract("m must be at least 1"));
    }
    let h = schema.items();
    let mut out = verify_k_anonymity(records, k);
    let mut groups: BTreeMap<&[NodeId], Vec<Vec<NodeId>>> = BTreeMap::new();
    for r in records {
        groups.entry(&r.qid).or_default().push(leaf_set(h, r.items.iter().copied()));
    }
    let mut b = Budget { limit: budget, used: 0 };
    for (q, sets) in groups {
        for (items, n) in combination_support(&sets, m, &mut b)? {
            if n < k {
                out.push(ViolationReport {
                    kind: ViolationKind::Combined,
                    qid: Some(q.to_vec()),
                    items,
                    match_count: n,
                });
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Writes reports as CSV rows `kind,witness,match_count`.
pub fn write_violations<W: Write>(writer: W, schema: &Schema, reports: &[ViolationReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let wrap = |e: csv::Error| Error::Parse {
        line: 0,
        message: e.to_string(),
    };
    w.write_record(["kind", "witness", "match_count"]).map_err(wrap)?;
    for r in reports {
        w.write_record([r.kind.to_string(), r.witness(schema), r.match_count.to_string()])
            .map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io("<violations writer>", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::testkit;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn items(s: &Schema, labels: &[&str]) -> Vec<NodeId> {
        let mut v: Vec<NodeId> = labels.iter().map(|l| s.items().lookup(l).unwrap()).collect();
        v.sort_unstable();
        v
    }

    #[test]
    fn published_table_is_anonymous() {
        let s = testkit::schema();
        let p = testkit::published(&s);
        assert!(verify_k_anonymity(&p, 2).is_empty());
        assert!(verify_km(&s, &p, 2, 3, DEFAULT_BUDGET).unwrap().is_empty());
        assert!(verify_k_km(&s, &p, 2, 3, DEFAULT_BUDGET).unwrap().is_empty());
    }

    #[test]
    fn attacker_abd_matches_two_records() {
        let s = testkit::schema();
        let p = testkit::published(&s);
        let h = s.items();
        let abd = items(&s, &["A", "B", "D"]);
        let matches: Vec<u64> = p
            .iter()
            .filter(|r| {
                let ls = leaf_set(h, r.items.iter().copied());
                abd.iter().all(|x| ls.contains(x))
            })
            .map(|r| r.id)
            .collect();
        assert_eq!(matches, vec![1, 2]);
        let with_qid: Vec<&Record> = p.iter().filter(|r| r.qid == p[0].qid).collect();
        assert_eq!(with_qid.len(), 2);
    }

    #[test]
    fn tampered_place_is_reported() {
        let s = testkit::schema();
        let mut p = testkit::published(&s);
        p[5].qid[2] = s.qids()[2].hierarchy.lookup("Egypt").unwrap();
        let v = verify_k_anonymity(&p, 2);
        assert_eq!(v.len(), 2);
        assert!(v.iter().all(|r| r.match_count == 1));
        assert!(verify_k_anonymity(&p, 1).is_empty());
    }

    #[test]
    fn single_record_violates_everything() {
        let s = testkit::schema();
        let p = testkit::published(&s)[..1].to_vec();
        let v = verify_km(&s, &p, 2, 1, DEFAULT_BUDGET).unwrap();
        // A, B and the four leaves of (C,D,E,F)
        assert_eq!(v.len(), 6);
        assert!(v.iter().all(|r| r.match_count == 1));
    }

    #[test]
    fn narrowed_cut_is_reported() {
        let s = testkit::schema();
        let mut p = testkit::published(&s);
        p[0].items = testkit::rec(&s, 1, ["24", "Male", "France"], &["A", "B", "C", "D"], true).items;
        let v = verify_k_km(&s, &p, 2, 3, DEFAULT_BUDGET).unwrap();
        assert!(!v.is_empty());
        assert!(v.iter().all(|r| r.match_count > 0 && r.match_count < 2));
    }

    #[test]
    fn budget_is_explicit() {
        let s = testkit::schema();
        let p = testkit::published(&s);
        assert!(matches!(verify_km(&s, &p, 2, 3, 10), Err(Error::BudgetExceeded { budget: 10 })));
    }

    /// Naive reference: every combination over the item universe, checked
    /// against every record.
    fn reference(s: &Schema, recs: &[Record], k: usize, m: usize) -> Vec<ViolationReport> {
        let h = s.items();
        let universe: Vec<NodeId> = {
            let mut v = h.leaves().to_vec();
            v.sort_unstable();
            v
        };
        let mut combos: Vec<Vec<NodeId>> = vec![vec![]];
        for _ in 0..m {
            let mut next = Vec::new();
            for c in &combos {
                for &u in &universe {
                    if c.last().is_none_or(|&l| u > l) {
                        let mut n = c.clone();
                        n.push(u);
                        next.push(n);
                    }
                }
            }
            combos.extend(next);
        }
        combos.retain(|c| !c.is_empty());
        combos.sort();
        combos.dedup();
        let matches = |r: &Record, x: NodeId| r.items.iter().any(|&g| h.leaves_under(g).contains(&x));
        let mut out = verify_k_anonymity(recs, k);
        let tuples: BTreeSet<&Vec<NodeId>> = recs.iter().map(|r| &r.qid).collect();
        for q in tuples {
            for c in &combos {
                let n = recs
                    .iter()
                    .filter(|r| &r.qid == q && c.iter().all(|&x| matches(r, x)))
                    .count();
                if n > 0 && n < k {
                    out.push(ViolationReport {
                        kind: ViolationKind::Combined,
                        qid: Some(q.clone()),
                        items: c.clone(),
                        match_count: n,
                    });
                }
            }
        }
        out.sort();
        out
    }

    fn arb_records() -> impl Strategy<Value = Vec<(usize, usize, Vec<usize>)>> {
        prop::collection::vec((0usize..3, 0usize..2, prop::collection::vec(0usize..20, 0..4)), 1..12)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn matches_naive_reference(rows in arb_records(), k in 1usize..4, m in 1usize..3) {
            let s = testkit::schema();
            let age = ["[21:40]", "[41:60]", "[61:80]"];
            let place = ["Europe", "Africa"];
            let h = s.items();
            let nodes: Vec<NodeId> = (0..h.len()).filter(|&n| n != h.root()).collect();
            let recs: Vec<Record> = rows
                .iter()
                .enumerate()
                .map(|(i, (a, p, its))| {
                    let mut r = testkit::rec(&s, i as u64, [age[*a], "All", place[*p]], &[], false);
                    r.items = its.iter().map(|&j| nodes[j % nodes.len()]).collect();
                    r
                })
                .collect();
            let got = verify_k_km(&s, &recs, k, m, DEFAULT_BUDGET).unwrap();
            prop_assert_eq!(got, reference(&s, &recs, k, m));
        }
    }
}
