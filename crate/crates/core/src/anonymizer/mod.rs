//! (k,k^m)-anonymization of one site's RT-dataset: k-member clustering on
//! the relational part, δ-bounded cluster merging, then per-cluster item
//! generalization.

mod cluster;
pub mod km;
mod merge;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::dataset::{NodeId, RTDataset, Record, Schema};
use crate::error::{Error, Result};
use crate::mapping::{extract_mappings, EquivalenceClass};
use crate::metrics::{ncp_dataset, ul_dataset, WeightVector};

pub use cluster::form_clusters;
pub use merge::merge_clusters;

#[derive(Debug, Clone, PartialEq)]
pub struct AnonymizationParams {
    pub k: usize,
    pub m: usize,
    /// Upper bound on the dataset NCP accepted while merging.
    pub delta: f64,
    pub weights: WeightVector,
    /// Only the first cluster seed is random.
    pub seed: u64,
}

impl AnonymizationParams {
    pub fn new(schema: &Schema, k: usize, m: usize, delta: f64, seed: u64) -> Self {
        AnonymizationParams {
            k,
            m,
            delta,
            weights: WeightVector::uniform(schema),
            seed,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Config(format!("k must be at least 2, got {}", self.k)));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::Config(format!("delta must lie in [0,1], got {}", self.delta)));
        }
        if self.m > km::MAX_M {
            return Err(Error::Config(format!("m must be at most {}, got {}", km::MAX_M, self.m)));
        }
        if n < self.k {
            return Err(Error::TooFewRecords { records: n, k: self.k });
        }
        Ok(())
    }
}

/// A group of at least k records sharing one generalized QID tuple.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cluster {
    pub id: usize,
    /// Indices into the source dataset's records, ascending.
    pub members: Vec<usize>,
    /// LCA of the members' QID values, aligned with [`Schema::qids`].
    pub tuple: Vec<NodeId>,
    /// Item nodes in use by the cluster's generalized records.
    pub item_cut: BTreeSet<NodeId>,
}

impl Cluster {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnonymizationStats {
    pub formed_clusters: usize,
    pub merged_clusters: usize,
    /// Dataset NCP of the formed and of the merged clustering.
    pub formed_ncp: f64,
    pub merged_ncp: f64,
    pub u_r: f64,
    pub u_t: f64,
}

#[derive(Debug, Clone)]
pub struct AnonymizedDataset {
    pub schema: Arc<Schema>,
    /// Generalized records in source order.
    pub records: Vec<Record>,
    pub clusters: Vec<Cluster>,
    /// Source record id to cluster id.
    pub provenance: BTreeMap<u64, usize>,
    pub k: usize,
    pub m: usize,
    pub stats: AnonymizationStats,
}

impl AnonymizedDataset {
    pub fn as_dataset(&self) -> RTDataset {
        RTDataset::new(Arc::clone(&self.schema), self.records.clone())
    }
}

/// Weighted NCP helpers over QID tuples, precomputed per node.
pub(crate) struct QidSpace<'a> {
    schema: &'a Schema,
    ncp: Vec<Vec<f64>>,
}

impl<'a> QidSpace<'a> {
    pub(crate) fn new(schema: &'a Schema, w: &WeightVector) -> Self {
        let ncp = schema
            .qids()
            .iter()
            .zip(w.relational())
            .map(|(q, &wi)| {
                let h = &q.hierarchy;
                (0..h.len()).map(|n| wi * crate::metrics::ncp_value(h, n)).collect()
            })
            .collect();
        QidSpace { schema, ncp }
    }

    pub(crate) fn ncp(&self, tuple: &[NodeId]) -> f64 {
        tuple.iter().zip(&self.ncp).map(|(&v, t)| t[v]).sum()
    }

    pub(crate) fn join(&self, a: &[NodeId], b: &[NodeId]) -> Vec<NodeId> {
        a.iter()
            .zip(b)
            .zip(self.schema.qids())
            .map(|((&x, &y), q)| q.hierarchy.lca(x, y))
            .collect()
    }

    pub(crate) fn join_ncp(&self, a: &[NodeId], b: &[NodeId]) -> f64 {
        a.iter()
            .zip(b)
            .zip(self.schema.qids())
            .zip(&self.ncp)
            .map(|(((&x, &y), q), t)| t[q.hierarchy.lca(x, y)])
            .sum()
    }
}

/// Folds clusters in which some but fewer than k records carry items into
/// their nearest neighbour; otherwise no item cut could protect them.
fn repair_item_support(clusters: &mut Vec<Cluster>, d: &RTDataset, p: &AnonymizationParams) {
    let space = QidSpace::new(&d.schema, &p.weights);
    let with_items = |c: &Cluster| c.members.iter().filter(|&&i| !d.records[i].items.is_empty()).count();
    while clusters.len() > 1 {
        let Some(bad) = clusters.iter().position(|c| {
            let n = with_items(c);
            n > 0 && n < p.k
        }) else {
            break;
        };
        let victim = clusters.remove(bad);
        let (best, _) = clusters
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let joined = space.join_ncp(&c.tuple, &victim.tuple);
                let cost = (c.len() + victim.len()) as f64 * joined
                    - c.len() as f64 * space.ncp(&c.tuple)
                    - victim.len() as f64 * space.ncp(&victim.tuple);
                (i, cost)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .unwrap();
        let target = &mut clusters[best];
        target.tuple = space.join(&target.tuple, &victim.tuple);
        target.members.extend(victim.members);
        target.members.sort_unstable();
        target.item_cut.extend(victim.item_cut);
    }
}

/// Generalizes the items of every cluster to satisfy k^m and writes out the
/// anonymized records.
pub fn enforce_km(clusters: &[Cluster], d: &RTDataset, p: &AnonymizationParams) -> Result<AnonymizedDataset> {
    let schema = &d.schema;
    let h = schema.items();
    let mut records: Vec<Option<Record>> = vec![None; d.len()];
    let mut out_clusters = Vec::with_capacity(clusters.len());
    let mut provenance = BTreeMap::new();
    for c in clusters {
        if c.len() < p.k {
            return Err(Error::contract(format!("cluster {} has {} < k records", c.id, c.len())));
        }
        let itemsets: Vec<&BTreeSet<NodeId>> = c.members.iter().map(|&i| &d.records[i].items).collect();
        let cut = km::enforce_cluster(h, &itemsets, p.k, p.m)?;
        for &i in &c.members {
            let r = &d.records[i];
            provenance.insert(r.id, c.id);
            records[i] = Some(Record {
                id: r.id,
                qid: c.tuple.clone(),
                items: cut.apply(&r.items),
                label: r.label,
                extra: r.extra.clone(),
            });
        }
        out_clusters.push(Cluster {
            item_cut: cut.nodes(),
            ..c.clone()
        });
    }
    let records: Vec<Record> = records
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.ok_or_else(|| Error::contract(format!("record at index {i} is in no cluster"))))
        .collect::<Result<_>>()?;
    let u_r = ncp_dataset(schema, &records, &p.weights)?;
    let u_t = ul_dataset(schema, &records, &p.weights)?;
    Ok(AnonymizedDataset {
        schema: Arc::clone(schema),
        records,
        clusters: out_clusters,
        provenance,
        k: p.k,
        m: p.m,
        stats: AnonymizationStats {
            u_r,
            u_t,
            ..Default::default()
        },
    })
}

/// Dataset NCP of a clustering.
pub fn clustering_ncp(clusters: &[Cluster], d: &RTDataset, w: &WeightVector) -> f64 {
    let space = QidSpace::new(&d.schema, w);
    let n: usize = clusters.iter().map(Cluster::len).sum();
    clusters.iter().map(|c| c.len() as f64 * space.ncp(&c.tuple)).sum::<f64>() / n.max(1) as f64
}

/// Full pipeline: cluster formation, merging, item generalization. Returns
/// the anonymized data and its equivalence classes (site id 0).
pub fn anonymize(d: &RTDataset, p: &AnonymizationParams) -> Result<(AnonymizedDataset, Vec<EquivalenceClass>)> {
    let mut formed = form_clusters(d, p)?;
    repair_item_support(&mut formed, d, p);
    let formed_ncp = clustering_ncp(&formed, d, &p.weights);
    let merged = merge_clusters(&formed, d, p)?;
    let merged_ncp = clustering_ncp(&merged, d, &p.weights);
    let mut a = enforce_km(&merged, d, p)?;
    a.stats.formed_clusters = formed.len();
    a.stats.merged_clusters = merged.len();
    a.stats.formed_ncp = formed_ncp;
    a.stats.merged_ncp = merged_ncp;
    let classes = extract_mappings(&a, 0);
    Ok((a, classes))
}
