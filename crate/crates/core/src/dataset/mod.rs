//! Relational-transactional (RT) datasets: schema, records, hierarchies,
//! file I/O and a synthetic generator.

mod hierarchy;
mod io;
mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use hierarchy::{lca_generalize, Hierarchy, NodeId};
pub use io::{
    load_dataset, load_generalized, load_schema, read_dataset, read_generalized, save_dataset,
    write_dataset, write_schema, SchemaFile,
};
pub use synth::{synth_generate, CategoricalSpec, NumericSpec, SynthConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttributeKind {
    #[serde(alias = "relational-numeric")]
    Numeric,
    #[serde(alias = "relational-categorical")]
    Categorical,
    Transactional,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSchema {
    pub name: String,
    pub kind: AttributeKind,
    #[serde(default, rename = "qid")]
    pub is_qid: bool,
    /// Hierarchy file, relative to the schema file.
    #[serde(default)]
    pub hierarchy: Option<String>,
}

/// A relational quasi-identifier together with its taxonomy.
#[derive(Debug, Clone)]
pub struct Qid {
    pub name: String,
    pub kind: AttributeKind,
    pub hierarchy: Arc<Hierarchy>,
}

/// Column layout of an RT-dataset plus the hierarchies of its generalizable
/// attributes.
///
/// Relational attributes that are not quasi-identifiers are carried through
/// verbatim; they are never generalized or encoded as features.
#[derive(Debug, Clone)]
pub struct Schema {
    attributes: Vec<AttributeSchema>,
    qids: Vec<Qid>,
    passthrough: Vec<String>,
    items_name: String,
    items: Arc<Hierarchy>,
    fingerprint: String,
}

impl Schema {
    /// `hierarchies` maps attribute name to its taxonomy.
    pub fn new(attributes: Vec<AttributeSchema>, mut hierarchies: BTreeMap<String, Hierarchy>) -> Result<Self> {
        let transactional: Vec<&AttributeSchema> = attributes
            .iter()
            .filter(|a| a.kind == AttributeKind::Transactional)
            .collect();
        if transactional.len() != 1 {
            return Err(Error::Schema(format!(
                "expected exactly one transactional attribute, found {}",
                transactional.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for a in &attributes {
            if a.name == "id" || a.name == "label" || !seen.insert(a.name.as_str()) {
                return Err(Error::Schema(format!("duplicate or reserved attribute name `{}`", a.name)));
            }
        }

        let items_name = transactional[0].name.clone();
        let items = hierarchies
            .remove(&items_name)
            .ok_or_else(|| Error::Schema(format!("transactional attribute `{items_name}` has no hierarchy")))?;

        let mut qids = Vec::new();
        let mut passthrough = Vec::new();
        for a in attributes.iter().filter(|a| a.kind != AttributeKind::Transactional) {
            if !a.is_qid {
                passthrough.push(a.name.clone());
                continue;
            }
            let h = hierarchies
                .remove(&a.name)
                .ok_or_else(|| Error::Schema(format!("QID `{}` has no hierarchy", a.name)))?;
            if (a.kind == AttributeKind::Numeric) != h.is_numeric() {
                return Err(Error::Schema(format!(
                    "attribute `{}` is {:?} but its hierarchy is {}numeric",
                    a.name,
                    a.kind,
                    if h.is_numeric() { "" } else { "not " }
                )));
            }
            qids.push(Qid {
                name: a.name.clone(),
                kind: a.kind,
                hierarchy: Arc::new(h),
            });
        }

        let mut hasher = Sha256::new();
        for a in &attributes {
            hasher.update(format!("{}:{:?}:{}\n", a.name, a.kind, a.is_qid).as_bytes());
        }
        for q in &qids {
            hasher.update(q.hierarchy.to_text().as_bytes());
            hasher.update(b"\n--\n");
        }
        hasher.update(items.to_text().as_bytes());
        let fingerprint = hex::encode(hasher.finalize());

        Ok(Schema {
            attributes,
            qids,
            passthrough,
            items_name,
            items: Arc::new(items),
            fingerprint,
        })
    }

    pub fn attributes(&self) -> &[AttributeSchema] {
        &self.attributes
    }

    pub fn qids(&self) -> &[Qid] {
        &self.qids
    }

    pub fn qid_index(&self, name: &str) -> Option<usize> {
        self.qids.iter().position(|q| q.name == name)
    }

    pub fn passthrough(&self) -> &[String] {
        &self.passthrough
    }

    pub fn items_name(&self) -> &str {
        &self.items_name
    }

    pub fn items(&self) -> &Hierarchy {
        &self.items
    }

    /// Hash over attribute declarations and every hierarchy.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }
}

/// One row of an RT-dataset.
///
/// The same type holds raw and generalized rows: raw rows reference leaves,
/// generalized rows may reference any node of the relevant hierarchy.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Record {
    pub id: u64,
    /// QID values, aligned with [`Schema::qids`].
    pub qid: Vec<NodeId>,
    /// Item nodes in the item hierarchy.
    pub items: BTreeSet<NodeId>,
    pub label: bool,
    /// Non-QID relational values, aligned with [`Schema::passthrough`].
    pub extra: Vec<String>,
}

impl Record {
    /// True when every value is a leaf of its hierarchy.
    pub fn is_raw(&self, schema: &Schema) -> bool {
        self.qid
            .iter()
            .zip(schema.qids())
            .all(|(&v, q)| q.hierarchy.is_leaf(v))
            && self.items.iter().all(|&i| schema.items().is_leaf(i))
    }
}

#[derive(Debug, Clone)]
pub struct RTDataset {
    pub schema: Arc<Schema>,
    pub records: Vec<Record>,
}

impl RTDataset {
    pub fn new(schema: Arc<Schema>, records: Vec<Record>) -> Self {
        RTDataset { schema, records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// New dataset with the records at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> RTDataset {
        RTDataset {
            schema: Arc::clone(&self.schema),
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }

    pub fn positives(&self) -> usize {
        self.records.iter().filter(|r| r.label).count()
    }
}
