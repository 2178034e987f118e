use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{AttributeKind, AttributeSchema, Hierarchy, NodeId, RTDataset, Record, Schema};
use crate::error::{Error, Result};

/// Serialized form of a schema file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemaFile {
    #[serde(rename = "attribute")]
    pub attributes: Vec<AttributeSchema>,
}

/// Loads a schema file and every hierarchy it references.
pub fn load_schema(path: &Path) -> Result<Arc<Schema>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: SchemaFile = toml::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut hierarchies = BTreeMap::new();
    for a in &file.attributes {
        if let Some(rel) = &a.hierarchy {
            let h = Hierarchy::load(&base.join(rel))?;
            hierarchies.insert(a.name.clone(), h);
        }
    }
    Ok(Arc::new(Schema::new(file.attributes, hierarchies)?))
}

/// Writes `schema.toml` and one `<attribute>.hier` per hierarchy into `dir`.
pub fn write_schema(dir: &Path, schema: &Schema) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut attributes = schema.attributes().to_vec();
    for a in &mut attributes {
        let h = if a.kind == AttributeKind::Transactional {
            Some(schema.items())
        } else {
            schema.qid_index(&a.name).map(|i| &*schema.qids()[i].hierarchy)
        };
        if let Some(h) = h {
            let file = format!("{}.hier", a.name);
            let p = dir.join(&file);
            std::fs::write(&p, h.to_text()).map_err(|e| Error::io(&p, e))?;
            a.hierarchy = Some(file);
        }
    }
    let text = toml::to_string(&SchemaFile { attributes }).map_err(|e| Error::Schema(e.to_string()))?;
    let p = dir.join("schema.toml");
    std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
}

fn header(schema: &Schema) -> Vec<String> {
    let mut h = vec!["id".to_string()];
    h.extend(schema.attributes().iter().map(|a| a.name.clone()));
    h.push("label".to_string());
    h
}

fn read_records<R: Read>(reader: R, schema: &Arc<Schema>, generalized: bool) -> Result<RTDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);

    let expected = header(schema);
    let mut rows = rdr.records();
    let head = match rows.next() {
        None => return Err(Error::Parse { line: 1, message: "missing header".into() }),
        Some(r) => r.map_err(|e| csv_err(&e))?,
    };
    let got: Vec<&str> = head.iter().collect();
    if got != expected {
        return Err(Error::Schema(format!(
            "header {:?} does not match schema columns {:?}",
            got, expected
        )));
    }

    let mut records = Vec::new();
    let mut ids = BTreeSet::new();
    for row in rows {
        let row = row.map_err(|e| csv_err(&e))?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        let perr = |message: String| Error::Parse { line, message };
        if row.len() != expected.len() {
            return Err(perr(format!("expected {} fields, found {}", expected.len(), row.len())));
        }
        let id: u64 = row[0].parse().map_err(|_| perr(format!("bad id `{}`", &row[0])))?;
        if !ids.insert(id) {
            return Err(perr(format!("duplicate id {id}")));
        }
        let label = match &row[row.len() - 1] {
            "0" => false,
            "1" => true,
            other => return Err(perr(format!("label must be 0 or 1, found `{other}`"))),
        };

        let mut qid = vec![0; schema.qids().len()];
        let mut extra = vec![String::new(); schema.passthrough().len()];
        let mut items = BTreeSet::new();
        for (col, attr) in schema.attributes().iter().enumerate() {
            let cell = &row[col + 1];
            if attr.kind == AttributeKind::Transactional {
                items = parse_items(schema.items(), cell, generalized, line)?;
            } else if cell.is_empty() {
                return Err(perr(format!("missing value for `{}`", attr.name)));
            } else if let Some(qi) = schema.qid_index(&attr.name) {
                let h = &schema.qids()[qi].hierarchy;
                let node = h
                    .lookup(cell)
                    .ok_or_else(|| Error::Schema(format!("line {line}: `{cell}` is not in the `{}` hierarchy", attr.name)))?;
                if !generalized && !h.is_leaf(node) {
                    return Err(Error::Schema(format!("line {line}: `{cell}` is not a leaf of `{}`", attr.name)));
                }
                qid[qi] = node;
            } else {
                let pi = schema.passthrough().iter().position(|p| p == &attr.name).unwrap();
                extra[pi] = cell.to_string();
            }
        }
        records.push(Record { id, qid, items, label, extra });
    }
    Ok(RTDataset::new(Arc::clone(schema), records))
}

fn parse_items(h: &Hierarchy, cell: &str, generalized: bool, line: usize) -> Result<BTreeSet<NodeId>> {
    let mut items = BTreeSet::new();
    for token in cell.split(';').map(str::trim).filter(|t| !t.is_empty()) {
        let node = h
            .parse_item_token(token)
            .ok_or_else(|| Error::Schema(format!("line {line}: unknown item `{token}`")))?;
        if !generalized && !h.is_leaf(node) {
            return Err(Error::Schema(format!("line {line}: `{token}` is not an original item")));
        }
        items.insert(node);
    }
    Ok(items)
}

fn csv_err(e: &csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::Parse { line, message: e.to_string() }
}

/// Reads a raw dataset: every value must be a hierarchy leaf.
pub fn read_dataset<R: Read>(reader: R, schema: &Arc<Schema>) -> Result<RTDataset> {
    read_records(reader, schema, false)
}

/// Reads a generalized dataset: values may be any hierarchy node.
pub fn read_generalized<R: Read>(reader: R, schema: &Arc<Schema>) -> Result<RTDataset> {
    read_records(reader, schema, true)
}

pub fn load_dataset(path: &Path, schema: &Arc<Schema>) -> Result<RTDataset> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(f, schema)
}

pub fn load_generalized(path: &Path, schema: &Arc<Schema>) -> Result<RTDataset> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_generalized(f, schema)
}

/// Writes records in the dataset CSV dialect. Generalized items are written
/// as `(a,b,...)` leaf groups and numeric ranges as `[lo:hi]`.
pub fn write_dataset<W: Write>(writer: W, schema: &Schema, records: &[Record]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let wrap = |e: csv::Error| Error::Parse { line: 0, message: e.to_string() };
    w.write_record(header(schema)).map_err(wrap)?;
    for r in records {
        let mut row = vec![r.id.to_string()];
        for a in schema.attributes() {
            if a.kind == AttributeKind::Transactional {
                let h = schema.items();
                let mut tokens: Vec<(usize, String)> = r
                    .items
                    .iter()
                    .map(|&i| (first_leaf_pos(h, i), h.item_token(i)))
                    .collect();
                tokens.sort();
                let tokens: Vec<String> = tokens.into_iter().map(|t| t.1).collect();
                row.push(tokens.join(";"));
            } else if let Some(qi) = schema.qid_index(&a.name) {
                row.push(schema.qids()[qi].hierarchy.label(r.qid[qi]).to_string());
            } else {
                let pi = schema.passthrough().iter().position(|p| p == &a.name).unwrap();
                row.push(r.extra[pi].clone());
            }
        }
        row.push(if r.label { "1" } else { "0" }.to_string());
        w.write_record(&row).map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))
}

// Orders item tokens by the file position of their first leaf.
fn first_leaf_pos(h: &Hierarchy, node: NodeId) -> usize {
    h.leaves_under(node)
        .iter()
        .filter_map(|l| h.leaves().iter().position(|x| x == l))
        .min()
        .unwrap_or(usize::MAX)
}

pub fn save_dataset(path: &Path, schema: &Schema, records: &[Record]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(std::io::BufWriter::new(f), schema, records)
}
