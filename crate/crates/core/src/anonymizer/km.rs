//! Per-cluster k^m item generalization over full-subtree cuts.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::dataset::{Hierarchy, NodeId};
use crate::error::{Error, Result};
use crate::metrics::{ul_items, WeightVector};

/// Largest m supported by the packed combination keys.
pub const MAX_M: usize = 6;
const SLOT_BITS: u32 = 21;

fn pack(ids: &[NodeId]) -> u128 {
    ids.iter().fold(0u128, |acc, &id| (acc << SLOT_BITS) | (id as u128 + 1))
}

fn unpack(mut key: u128) -> Vec<NodeId> {
    let mut out = Vec::new();
    while key != 0 {
        out.push((key & ((1 << SLOT_BITS) - 1)) as usize - 1);
        key >>= SLOT_BITS;
    }
    out.reverse();
    out
}

/// Calls `f` with every non-empty subset of `items` of size at most `m`.
fn for_each_subset(items: &[NodeId], m: usize, f: &mut impl FnMut(u128)) {
    fn rec(items: &[NodeId], start: usize, m: usize, buf: &mut Vec<NodeId>, f: &mut impl FnMut(u128)) {
        for i in start..items.len() {
            buf.push(items[i]);
            f(pack(buf));
            if buf.len() < m {
                rec(items, i + 1, m, buf, f);
            }
            buf.pop();
        }
    }
    rec(items, 0, m, &mut Vec::with_capacity(m), f);
}

/// Item to cut-node assignment for one cluster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cut {
    cover: BTreeMap<NodeId, NodeId>,
}

impl Cut {
    /// The identity cut over the given itemsets.
    pub fn identity<'a>(itemsets: impl IntoIterator<Item = &'a BTreeSet<NodeId>>) -> Self {
        let cover = itemsets.into_iter().flatten().map(|&i| (i, i)).collect();
        Cut { cover }
    }

    pub fn apply(&self, items: &BTreeSet<NodeId>) -> BTreeSet<NodeId> {
        items.iter().map(|i| self.cover[i]).collect()
    }

    /// Distinct cut nodes in use.
    pub fn nodes(&self) -> BTreeSet<NodeId> {
        self.cover.values().copied().collect()
    }

    fn generalize(&self, h: &Hierarchy, node: NodeId) -> Option<Cut> {
        let parent = h.parent(node)?;
        let cover = self
            .cover
            .iter()
            .map(|(&i, &c)| (i, if h.covers(parent, c) { parent } else { c }))
            .collect();
        Some(Cut { cover })
    }
}

/// Violations left, leaves under the new parent, the generalized node, the
/// new cut and its supports.
type Candidate = (usize, usize, NodeId, Cut, HashMap<u128, usize>);

fn generalized_sets(cut: &Cut, itemsets: &[&BTreeSet<NodeId>]) -> Vec<Vec<NodeId>> {
    itemsets
        .iter()
        .map(|s| cut.apply(s).into_iter().collect())
        .collect()
}

fn supports(sets: &[Vec<NodeId>], m: usize) -> HashMap<u128, usize> {
    let mut counts = HashMap::new();
    for s in sets {
        for_each_subset(s, m, &mut |key| *counts.entry(key).or_insert(0) += 1);
    }
    counts
}

fn violation_count(counts: &HashMap<u128, usize>, k: usize) -> usize {
    counts.values().filter(|&&c| c < k).count()
}

/// Finds a cut under which every combination of at most `m` generalized
/// items present in the cluster is shared by at least `k` of its records.
///
/// Each step takes the most supported violating combination and lifts the
/// one of its nodes whose generalization leaves the fewest violations.
pub fn enforce_cluster(h: &Hierarchy, itemsets: &[&BTreeSet<NodeId>], k: usize, m: usize) -> Result<Cut> {
    let mut cut = Cut::identity(itemsets.iter().copied());
    if m == 0 {
        return Ok(cut);
    }
    if m > MAX_M {
        return Err(Error::contract(format!("m = {m} exceeds the supported maximum {MAX_M}")));
    }
    if itemsets.len() < k {
        return Err(Error::contract(format!("cluster of {} records is smaller than k = {k}", itemsets.len())));
    }
    if h.len() >= 1 << SLOT_BITS {
        return Err(Error::Overflow(h.len()));
    }
    let mut counts = supports(&generalized_sets(&cut, itemsets), m);
    loop {
        let worst = counts
            .iter()
            .filter(|&(_, &c)| c < k)
            .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
            .map(|(&key, _)| key);
        let Some(worst) = worst else {
            return Ok(cut);
        };
        let mut best: Option<Candidate> = None;
        for node in unpack(worst) {
            let Some(next) = cut.generalize(h, node) else {
                continue;
            };
            let c = supports(&generalized_sets(&next, itemsets), m);
            let v = violation_count(&c, k);
            let parent = h.parent(node).unwrap();
            let key = (v, h.leaf_count(parent), node);
            if best.as_ref().is_none_or(|b| key < (b.0, b.1, b.2)) {
                best = Some((key.0, key.1, key.2, next, c));
            }
        }
        match best {
            Some((_, _, _, next, c)) => {
                cut = next;
                counts = c;
            }
            None => {
                return Err(Error::Unsatisfiable(format!(
                    "fewer than {k} records with items share the item root"
                )))
            }
        }
    }
}

/// Sum of record ULs of a cluster after enforcement.
pub fn enforced_ul_sum(
    h: &Hierarchy,
    itemsets: &[&BTreeSet<NodeId>],
    k: usize,
    m: usize,
    w: &WeightVector,
) -> Result<f64> {
    let cut = enforce_cluster(h, itemsets, k, m)?;
    itemsets.iter().map(|s| ul_items(h, &cut.apply(s), w)).sum()
}
