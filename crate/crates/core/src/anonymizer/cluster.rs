use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AnonymizationParams, Cluster, QidSpace};
use crate::dataset::RTDataset;
use crate::error::Result;

/// Greedy k-member clustering on the QID attributes.
///
/// The first seed is random; each later seed is the unassigned record
/// farthest from the previous seed. A seed grows by the record whose
/// addition gives the smallest tuple NCP until it holds k records. The
/// fewer-than-k leftovers join the cluster whose tuple NCP they raise least.
pub fn form_clusters(d: &RTDataset, p: &AnonymizationParams) -> Result<Vec<Cluster>> {
    p.validate(d.len())?;
    let space = QidSpace::new(&d.schema, &p.weights);
    let recs = &d.records;
    let n = recs.len();
    let mut free: BTreeSet<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut clusters: Vec<Cluster> = Vec::new();
    let mut last: Option<usize> = None;

    while free.len() >= p.k {
        let seed = match last {
            None => rng.random_range(0..n),
            Some(prev) => {
                let mut best = (f64::NEG_INFINITY, usize::MAX);
                for &i in &free {
                    let dist = space.join_ncp(&recs[prev].qid, &recs[i].qid);
                    if dist > best.0 {
                        best = (dist, i);
                    }
                }
                best.1
            }
        };
        free.remove(&seed);
        last = Some(seed);
        let mut members = vec![seed];
        let mut tuple = recs[seed].qid.clone();
        while members.len() < p.k {
            let mut best = (f64::INFINITY, usize::MAX);
            for &i in &free {
                let cost = space.join_ncp(&tuple, &recs[i].qid);
                if cost < best.0 {
                    best = (cost, i);
                }
            }
            free.remove(&best.1);
            tuple = space.join(&tuple, &recs[best.1].qid);
            members.push(best.1);
        }
        clusters.push(Cluster {
            id: clusters.len(),
            members,
            tuple,
            item_cut: BTreeSet::new(),
        });
    }

    for i in free {
        let mut best = (f64::INFINITY, usize::MAX);
        for (ci, c) in clusters.iter().enumerate() {
            let inflate = space.join_ncp(&c.tuple, &recs[i].qid) - space.ncp(&c.tuple);
            if inflate < best.0 {
                best = (inflate, ci);
            }
        }
        let c = &mut clusters[best.1];
        c.tuple = space.join(&c.tuple, &recs[i].qid);
        c.members.push(i);
    }

    for c in &mut clusters {
        c.members.sort_unstable();
        c.item_cut = c.members.iter().flat_map(|&i| recs[i].items.iter().copied()).collect();
    }
    Ok(clusters)
}
