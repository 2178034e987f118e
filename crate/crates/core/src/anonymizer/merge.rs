use std::collections::{BTreeSet, HashMap};

use super::km::enforced_ul_sum;
use super::{AnonymizationParams, Cluster, QidSpace};
use crate::dataset::{NodeId, RTDataset};
use crate::error::Result;

struct Work {
    id: usize,
    members: Vec<usize>,
    tuple: Vec<NodeId>,
    ncp: f64,
    ul_sum: f64,
}

/// Iteratively merges clusters while the dataset NCP stays within δ.
///
/// Each step takes the cluster with the lowest NCP as seed, ranks every
/// admissible partner by the dataset NCP and by the dataset UL (after item
/// generalization) that the merge would produce, and merges the partner with
/// the smallest rank sum. Ties go to the lower cluster id.
pub fn merge_clusters(clusters: &[Cluster], d: &RTDataset, p: &AnonymizationParams) -> Result<Vec<Cluster>> {
    let space = QidSpace::new(&d.schema, &p.weights);
    let h = d.schema.items();
    let n = d.len() as f64;
    let ul_of = |members: &[usize]| -> Result<f64> {
        let sets: Vec<&BTreeSet<NodeId>> = members.iter().map(|&i| &d.records[i].items).collect();
        enforced_ul_sum(h, &sets, p.k, p.m, &p.weights)
    };

    let mut work = Vec::with_capacity(clusters.len());
    for (i, c) in clusters.iter().enumerate() {
        work.push(Work {
            id: i,
            members: c.members.clone(),
            tuple: c.tuple.clone(),
            ncp: space.ncp(&c.tuple),
            ul_sum: ul_of(&c.members)?,
        });
    }
    let mut next_id = work.len();
    let mut total_ncp: f64 = work.iter().map(|w| w.members.len() as f64 * w.ncp).sum();
    let mut total_ul: f64 = work.iter().map(|w| w.ul_sum).sum();
    let mut pair_ul: HashMap<(usize, usize), f64> = HashMap::new();

    while work.len() > 1 {
        let si = (0..work.len())
            .min_by(|&a, &b| work[a].ncp.total_cmp(&work[b].ncp).then(work[a].id.cmp(&work[b].id)))
            .unwrap();
        let seed = &work[si];

        // (index, merged tuple, merged ncp, dataset ncp after)
        let mut feasible = Vec::new();
        for (ci, c) in work.iter().enumerate() {
            if ci == si {
                continue;
            }
            let tuple = space.join(&seed.tuple, &c.tuple);
            let ncp = space.ncp(&tuple);
            let size = (seed.members.len() + c.members.len()) as f64;
            let after = total_ncp - seed.members.len() as f64 * seed.ncp - c.members.len() as f64 * c.ncp + size * ncp;
            if after / n <= p.delta + 1e-12 {
                feasible.push((ci, tuple, ncp, after / n));
            }
        }
        if feasible.is_empty() {
            break;
        }

        let mut ul_after = Vec::with_capacity(feasible.len());
        for (ci, ..) in &feasible {
            let c = &work[*ci];
            let key = (seed.id.min(c.id), seed.id.max(c.id));
            let merged = match pair_ul.get(&key) {
                Some(&v) => v,
                None => {
                    let mut members = seed.members.clone();
                    members.extend_from_slice(&c.members);
                    let v = ul_of(&members)?;
                    pair_ul.insert(key, v);
                    v
                }
            };
            ul_after.push(total_ul - seed.ul_sum - c.ul_sum + merged);
        }

        let rank = |score: &dyn Fn(usize) -> f64| -> Vec<usize> {
            let mut order: Vec<usize> = (0..feasible.len()).collect();
            order.sort_by(|&a, &b| {
                score(a)
                    .total_cmp(&score(b))
                    .then(work[feasible[a].0].id.cmp(&work[feasible[b].0].id))
            });
            let mut pos = vec![0; feasible.len()];
            for (r, &j) in order.iter().enumerate() {
                pos[j] = r;
            }
            pos
        };
        let by_r = rank(&|j| feasible[j].3);
        let by_t = rank(&|j| ul_after[j]);
        let pick = (0..feasible.len())
            .min_by_key(|&j| (by_r[j] + by_t[j], work[feasible[j].0].id))
            .unwrap();

        let (ci, tuple, ncp, _) = feasible.swap_remove(pick);
        let merged_ul = ul_after[pick] - (total_ul - work[si].ul_sum - work[ci].ul_sum);
        let (a, b) = if si > ci { (si, ci) } else { (ci, si) };
        let first = work.swap_remove(a);
        let second = work.swap_remove(b);
        total_ncp += (first.members.len() + second.members.len()) as f64 * ncp
            - first.members.len() as f64 * first.ncp
            - second.members.len() as f64 * second.ncp;
        total_ul += merged_ul - first.ul_sum - second.ul_sum;
        let mut members = first.members;
        members.extend(second.members);
        members.sort_unstable();
        work.push(Work {
            id: next_id,
            members,
            tuple,
            ncp,
            ul_sum: merged_ul,
        });
        next_id += 1;
    }

    work.sort_by_key(|w| w.members[0]);
    Ok(work
        .into_iter()
        .enumerate()
        .map(|(id, w)| Cluster {
            id,
            item_cut: w.members.iter().flat_map(|&i| d.records[i].items.iter().copied()).collect(),
            members: w.members,
            tuple: w.tuple,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anonymizer::{clustering_ncp, form_clusters};
    use crate::dataset::testkit;
    use std::sync::Arc;

    fn setup(delta: f64) -> (RTDataset, AnonymizationParams, Vec<Cluster>) {
        let s = testkit::schema();
        let d = RTDataset::new(Arc::clone(&s), testkit::raw_records(&s));
        let p = AnonymizationParams::new(&s, 2, 2, delta, 0);
        let cs = form_clusters(&d, &p).unwrap();
        (d, p, cs)
    }

    #[test]
    fn zero_delta_blocks_merging() {
        let (d, p, cs) = setup(0.0);
        let out = merge_clusters(&cs, &d, &p).unwrap();
        assert_eq!(out.len(), cs.len());
    }

    #[test]
    fn unit_delta_merges_to_one() {
        let (d, p, cs) = setup(1.0);
        let out = merge_clusters(&cs, &d, &p).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].len(), 6);
    }

    #[test]
    fn delta_bound_holds() {
        for delta in [0.3, 0.5, 0.7, 0.9] {
            let (d, p, cs) = setup(delta);
            let before = clustering_ncp(&cs, &d, &p.weights);
            let out = merge_clusters(&cs, &d, &p).unwrap();
            let after = clustering_ncp(&out, &d, &p.weights);
            assert!(after <= delta.max(before) + 1e-12, "{delta}: {after}");
            assert!(out.len() <= cs.len());
        }
    }
}
