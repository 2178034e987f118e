//! Syntactic mappings: the equivalence classes a site publishes after
//! anonymization, their union at the aggregator, and the machinery that
//! places raw test samples under a class before prediction.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};

use sha2::{Digest, Sha256};

use crate::anonymizer::AnonymizedDataset;
use crate::dataset::{NodeId, Record, Schema};
use crate::error::{Error, Result};
use crate::metrics::{combined_mapping_loss, WeightVector};

/// A generalized QID tuple plus the generalized items used by its records.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EquivalenceClass {
    pub id: usize,
    pub site_id: usize,
    /// Aligned with [`Schema::qids`].
    pub relational: Vec<NodeId>,
    pub item_signature: BTreeSet<NodeId>,
    /// Number of records backing the class.
    pub support: usize,
}

impl EquivalenceClass {
    fn key(&self) -> (Vec<NodeId>, Vec<NodeId>) {
        (self.relational.clone(), self.item_signature.iter().copied().collect())
    }
}

/// One class per distinct (relational tuple, item signature) of an
/// anonymized dataset. No record-level data is carried over.
pub fn extract_mappings(a: &AnonymizedDataset, site_id: usize) -> Vec<EquivalenceClass> {
    let mut groups: BTreeMap<(Vec<NodeId>, Vec<NodeId>), usize> = BTreeMap::new();
    for c in &a.clusters {
        let key = (c.tuple.clone(), c.item_cut.iter().copied().collect());
        *groups.entry(key).or_default() += c.members.len();
    }
    groups
        .into_iter()
        .enumerate()
        .map(|(id, ((relational, items), support))| {
            debug_assert!(support >= a.k);
            EquivalenceClass {
                id,
                site_id,
                relational,
                item_signature: items.into_iter().collect(),
                support,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Slot {
    /// Index into [`Schema::qids`].
    Qid(usize),
    Items,
}

/// Ordered one-hot feature layout over hierarchy nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodingSchema {
    selected: Vec<usize>,
    features: Vec<(Slot, NodeId)>,
    index: HashMap<(Slot, NodeId), usize>,
}

impl EncodingSchema {
    fn build(selected: &[usize], mut features: Vec<(Slot, NodeId)>) -> Self {
        features.sort_unstable();
        features.dedup();
        let index = features.iter().enumerate().map(|(i, &f)| (f, i)).collect();
        let mut selected = selected.to_vec();
        selected.sort_unstable();
        selected.dedup();
        EncodingSchema {
            selected,
            features,
            index,
        }
    }

    /// Every leaf of the selected QIDs and of the item hierarchy; used for
    /// models trained on raw data.
    pub fn leaves(schema: &Schema, selected: &[usize]) -> Self {
        let mut features = Vec::new();
        for &q in selected {
            features.extend(schema.qids()[q].hierarchy.leaves().iter().map(|&l| (Slot::Qid(q), l)));
        }
        features.extend(schema.items().leaves().iter().map(|&l| (Slot::Items, l)));
        Self::build(selected, features)
    }

    /// The nodes appearing in a collection of equivalence classes.
    pub fn from_classes(selected: &[usize], classes: &[EquivalenceClass]) -> Self {
        let mut features = Vec::new();
        for c in classes {
            features.extend(selected.iter().map(|&q| (Slot::Qid(q), c.relational[q])));
            features.extend(c.item_signature.iter().map(|&u| (Slot::Items, u)));
        }
        Self::build(selected, features)
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn contains(&self, slot: Slot, node: NodeId) -> bool {
        self.index.contains_key(&(slot, node))
    }

    /// Column of a feature, if present.
    pub fn position(&self, slot: Slot, node: NodeId) -> Option<usize> {
        self.index.get(&(slot, node)).copied()
    }

    /// Human-readable feature names, e.g. `age=[21:40]`.
    pub fn names(&self, schema: &Schema) -> Vec<String> {
        self.features
            .iter()
            .map(|&(slot, node)| match slot {
                Slot::Qid(q) => {
                    let qid = &schema.qids()[q];
                    format!("{}={}", qid.name, qid.hierarchy.label(node))
                }
                Slot::Items => format!("{}={}", schema.items_name(), schema.items().item_token(node)),
            })
            .collect()
    }

    /// Hash binding the data schema to this feature layout.
    pub fn hash(&self, schema: &Schema) -> String {
        let mut h = Sha256::new();
        h.update(schema.fingerprint().as_bytes());
        for n in self.names(schema) {
            h.update(b"\n");
            h.update(n.as_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// One-hot encodes a (generalized) record. Discarded QIDs are skipped.
pub fn encode(schema: &Schema, enc: &EncodingSchema, g: &Record) -> Result<Vec<f64>> {
    let mut x = vec![0.0; enc.len()];
    let unknown = |slot: Slot, node: NodeId| {
        let name = match slot {
            Slot::Qid(q) => format!("{}={}", schema.qids()[q].name, schema.qids()[q].hierarchy.label(node)),
            Slot::Items => format!("{}={}", schema.items_name(), schema.items().item_token(node)),
        };
        Error::UnknownFeature(name)
    };
    for &q in &enc.selected {
        let key = (Slot::Qid(q), g.qid[q]);
        let &i = enc.index.get(&key).ok_or_else(|| unknown(key.0, key.1))?;
        x[i] = 1.0;
    }
    for &u in &g.items {
        let &i = enc.index.get(&(Slot::Items, u)).ok_or_else(|| unknown(Slot::Items, u))?;
        x[i] = 1.0;
    }
    Ok(x)
}

/// Deduplicated union of equivalence classes with its encoding layout.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingSet {
    pub classes: Vec<EquivalenceClass>,
    pub encoding: EncodingSchema,
    fingerprint: String,
}

impl MappingSet {
    /// Classes are deduplicated by content and renumbered in canonical order,
    /// so the result does not depend on the order of the input.
    pub fn new(schema: &Schema, selected: &[usize], classes: Vec<EquivalenceClass>) -> Self {
        let mut merged: BTreeMap<(Vec<NodeId>, Vec<NodeId>), EquivalenceClass> = BTreeMap::new();
        for c in classes {
            merged
                .entry(c.key())
                .and_modify(|e| {
                    e.site_id = e.site_id.min(c.site_id);
                    e.support += c.support;
                })
                .or_insert(c);
        }
        let classes: Vec<EquivalenceClass> = merged
            .into_values()
            .enumerate()
            .map(|(id, c)| EquivalenceClass { id, ..c })
            .collect();
        let encoding = EncodingSchema::from_classes(selected, &classes);
        MappingSet {
            classes,
            encoding,
            fingerprint: schema.fingerprint().to_string(),
        }
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
}

/// Union of per-site mapping sets; every set must come from the same schema
/// and feature selection.
pub fn merge_mappings(schema: &Schema, sets: &[MappingSet]) -> Result<MappingSet> {
    let first = sets.first().ok_or_else(|| Error::contract("no mapping sets to merge"))?;
    for s in sets {
        if s.fingerprint != schema.fingerprint() {
            return Err(Error::HashMismatch {
                expected: schema.fingerprint().to_string(),
                found: s.fingerprint.clone(),
            });
        }
        if s.encoding.selected != first.encoding.selected {
            return Err(Error::Schema("sites selected different QID attributes".into()));
        }
    }
    let classes = sets.iter().flat_map(|s| s.classes.iter().cloned()).collect();
    Ok(MappingSet::new(schema, &first.encoding.selected, classes))
}

/// Whether every value of `t` lies under the class's value for that attribute
/// and every item of `t` lies under some item of the class signature.
pub fn is_legitimate(schema: &Schema, t: &Record, class: &EquivalenceClass) -> bool {
    let relational = t
        .qid
        .iter()
        .zip(&class.relational)
        .zip(schema.qids())
        .all(|((&v, &g), q)| q.hierarchy.covers(g, v));
    let h = schema.items();
    relational && t.items.iter().all(|&i| class.item_signature.iter().any(|&u| h.covers(u, i)))
}

/// Least-loss legitimate class for `t`; ties go to the lower class id.
pub fn select_mapping<'a>(
    schema: &Schema,
    t: &Record,
    set: &'a MappingSet,
    w: &WeightVector,
) -> Result<&'a EquivalenceClass> {
    let mut best: Option<(f64, &EquivalenceClass)> = None;
    for c in set.classes.iter().filter(|c| is_legitimate(schema, t, c)) {
        let loss = combined_mapping_loss(schema, t, c, w)?;
        match best {
            Some((b, bc)) if b < loss || (b == loss && bc.id < c.id) => {}
            _ => best = Some((loss, c)),
        }
    }
    best.map(|(_, c)| c).ok_or(Error::NoMapping(t.id))
}

/// Rewrites `t` in the class's generalized values; each item becomes the
/// signature item covering it.
pub fn transform(schema: &Schema, t: &Record, class: &EquivalenceClass) -> Result<Record> {
    if !is_legitimate(schema, t, class) {
        return Err(Error::contract(format!("class {} is not legitimate for sample {}", class.id, t.id)));
    }
    let h = schema.items();
    let items = t
        .items
        .iter()
        .map(|&i| *class.item_signature.iter().find(|&&u| h.covers(u, i)).unwrap())
        .collect();
    Ok(Record {
        id: t.id,
        qid: class.relational.clone(),
        items,
        label: t.label,
        extra: t.extra.clone(),
    })
}

/// Outcome of placing a test sample under the shared mapping.
#[derive(Debug, Clone, PartialEq)]
pub enum Mapped {
    Class { class_id: usize, record: Record },
    /// No legitimate class; values generalized to the hierarchy roots.
    Unmapped { record: Record },
}

impl Mapped {
    pub fn record(&self) -> &Record {
        match self {
            Mapped::Class { record, .. } | Mapped::Unmapped { record } => record,
        }
    }
}

pub fn map_sample(schema: &Schema, t: &Record, set: &MappingSet, w: &WeightVector) -> Result<Mapped> {
    match select_mapping(schema, t, set, w) {
        Ok(c) => Ok(Mapped::Class {
            class_id: c.id,
            record: transform(schema, t, c)?,
        }),
        Err(Error::NoMapping(_)) => {
            let mut items = BTreeSet::new();
            if !t.items.is_empty() {
                items.insert(schema.items().root());
            }
            Ok(Mapped::Unmapped {
                record: Record {
                    id: t.id,
                    qid: schema.qids().iter().map(|q| q.hierarchy.root()).collect(),
                    items,
                    label: t.label,
                    extra: t.extra.clone(),
                },
            })
        }
        Err(e) => Err(e),
    }
}

const MAGIC: &str = "# synfl mapping exchange v1";

/// Writes the line-oriented exchange format:
/// `site<TAB>class<TAB>support<TAB>attr=node...<TAB>items=a;b;(c,d)`.
pub fn write_mappings<W: Write>(mut out: W, schema: &Schema, set: &MappingSet, w: &WeightVector) -> Result<()> {
    let io = |e| Error::io("<mapping writer>", e);
    writeln!(out, "{MAGIC}").map_err(io)?;
    writeln!(out, "# schema {}", set.fingerprint).map_err(io)?;
    let selected: Vec<&str> = set.encoding.selected.iter().map(|&q| schema.qids()[q].name.as_str()).collect();
    writeln!(out, "# selected {}", selected.join(",")).map_err(io)?;
    let weights: Vec<String> = w
        .names()
        .iter()
        .zip(w.relational())
        .map(|(n, v)| format!("{n}={v}"))
        .collect();
    writeln!(out, "# weights {}", weights.join(",")).map_err(io)?;
    for c in &set.classes {
        let mut fields = vec![c.site_id.to_string(), c.id.to_string(), c.support.to_string()];
        for (q, &v) in schema.qids().iter().zip(&c.relational) {
            fields.push(format!("{}={}", q.name, q.hierarchy.label(v)));
        }
        let items: Vec<String> = c.item_signature.iter().map(|&u| schema.items().item_token(u)).collect();
        fields.push(format!("{}={}", schema.items_name(), items.join(";")));
        writeln!(out, "{}", fields.join("\t")).map_err(io)?;
    }
    Ok(())
}

/// Reads a mapping exchange file written by [`write_mappings`].
pub fn read_mappings<R: BufRead>(input: R, schema: &Schema) -> Result<(MappingSet, WeightVector)> {
    let mut fingerprint = None;
    let mut selected: Option<Vec<usize>> = None;
    let mut weights = None;
    let mut classes = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io("<mapping reader>", e))?;
        let perr = |m: String| Error::Parse { line: lineno, message: m };
        if line.trim().is_empty() || line == MAGIC {
            continue;
        }
        if let Some(rest) = line.strip_prefix("# schema ") {
            fingerprint = Some(rest.trim().to_string());
        } else if let Some(rest) = line.strip_prefix("# selected ") {
            let names = rest.trim().split(',').filter(|s| !s.is_empty());
            selected = Some(
                names
                    .map(|n| schema.qid_index(n).ok_or_else(|| perr(format!("unknown QID `{n}`"))))
                    .collect::<Result<_>>()?,
            );
        } else if let Some(rest) = line.strip_prefix("# weights ") {
            let mut values = vec![0.0; schema.qids().len()];
            for pair in rest.trim().split(',') {
                let (n, v) = pair.split_once('=').ok_or_else(|| perr(format!("bad weight `{pair}`")))?;
                let qi = schema.qid_index(n).ok_or_else(|| perr(format!("unknown QID `{n}`")))?;
                values[qi] = v.parse().map_err(|_| perr(format!("bad weight `{pair}`")))?;
            }
            weights = Some(WeightVector::from_relational(schema, &values)?);
        } else if line.starts_with('#') {
            continue;
        } else {
            classes.push(parse_class(schema, &line).map_err(perr)?);
        }
    }
    let fingerprint = fingerprint.ok_or_else(|| Error::Parse { line: 0, message: "missing schema line".into() })?;
    if fingerprint != schema.fingerprint() {
        return Err(Error::HashMismatch {
            expected: schema.fingerprint().to_string(),
            found: fingerprint,
        });
    }
    let selected = selected.unwrap_or_else(|| (0..schema.qids().len()).collect());
    let weights = weights.unwrap_or_else(|| WeightVector::uniform(schema));
    // `new` would renumber; keep the file's ids when they are already canonical.
    let set = MappingSet::new(schema, &selected, classes);
    Ok((set, weights))
}

fn parse_class(schema: &Schema, line: &str) -> std::result::Result<EquivalenceClass, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    let expected = 3 + schema.qids().len() + 1;
    if fields.len() != expected {
        return Err(format!("expected {expected} fields, found {}", fields.len()));
    }
    let num = |s: &str| s.trim().parse::<usize>().map_err(|_| format!("bad number `{s}`"));
    let mut relational = Vec::new();
    for (q, f) in schema.qids().iter().zip(&fields[3..]) {
        let (name, value) = f.split_once('=').ok_or_else(|| format!("bad pair `{f}`"))?;
        if name != q.name {
            return Err(format!("expected attribute `{}`, found `{name}`", q.name));
        }
        relational.push(q.hierarchy.lookup(value).ok_or_else(|| format!("unknown node `{value}`"))?);
    }
    let last = fields[expected - 1];
    let (name, value) = last.split_once('=').ok_or_else(|| format!("bad pair `{last}`"))?;
    if name != schema.items_name() {
        return Err(format!("expected `{}`, found `{name}`", schema.items_name()));
    }
    let item_signature = value
        .split(';')
        .filter(|t| !t.trim().is_empty())
        .map(|t| schema.items().parse_item_token(t).ok_or_else(|| format!("unknown item `{t}`")))
        .collect::<std::result::Result<_, _>>()?;
    Ok(EquivalenceClass {
        site_id: num(fields[0])?,
        id: num(fields[1])?,
        support: num(fields[2])?,
        relational,
        item_signature,
    })
}
