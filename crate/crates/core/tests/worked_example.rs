mod support;

use std::time::Instant;

use support::{worked_fixture, node};
use synfl::anonymizer::{anonymize, AnonymizationParams};
use synfl::mapping::{is_legitimate, select_mapping, transform, EquivalenceClass, MappingSet};
use synfl::metrics::{ncp_dataset, ul_dataset, ul_record, WeightVector};
use synfl::verifier::{verify_k_km, DEFAULT_BUDGET};
use synfl::{Record, Schema};

#[test]
fn anonymized_fixture_and_published_table_pass() {
    let start = Instant::now();
    let (schema, raw, published) = worked_fixture();
    let p = AnonymizationParams::new(&schema, 2, 3, 0.95, 0);
    let (out, classes) = anonymize(&raw, &p).unwrap();
    assert!(verify_k_km(&schema, &out.records, 2, 3, DEFAULT_BUDGET).unwrap().is_empty());
    assert!(!classes.is_empty());
    assert!(verify_k_km(&schema, &published.records, 2, 3, DEFAULT_BUDGET).unwrap().is_empty());
    assert!(start.elapsed().as_secs_f64() < 1.0);
}

#[test]
fn single_cell_tampers_are_caught() {
    let (schema, _, published) = worked_fixture();
    let age = &schema.qids()[0].hierarchy;
    let mut unique_age = published.records.clone();
    unique_age[0].qid[0] = node(age, "[61:80]");
    assert!(!verify_k_km(&schema, &unique_age, 2, 3, DEFAULT_BUDGET).unwrap().is_empty());

    let items = schema.items();
    let mut narrowed = published.records.clone();
    narrowed[0].items.remove(&node(items, "(C,D,E,F)"));
    narrowed[0].items.insert(node(items, "C"));
    assert!(!verify_k_km(&schema, &narrowed, 2, 3, DEFAULT_BUDGET).unwrap().is_empty());
}

#[test]
fn ul_of_mixed_record_is_17_over_63() {
    let (schema, _, published) = worked_fixture();
    let w = WeightVector::uniform(&schema);
    let r = &published.records[0];
    assert!((ul_record(&schema, r, &w).unwrap() - 17.0 / 63.0).abs() < 1e-12);
    // age [21:40] covers 3/7, [41:60] 2/7, [61:80] 2/7; gender All 1, Female/Male 0;
    // place Europe/Africa 1/2, All 1
    let per = [(3.0 / 7.0 + 1.0 + 0.5) / 3.0, (2.0 / 7.0 + 0.0 + 0.5) / 3.0, (2.0 / 7.0 + 0.0 + 1.0) / 3.0];
    let expect = per.iter().sum::<f64>() / 3.0;
    assert!((ncp_dataset(&schema, &published.records, &w).unwrap() - expect).abs() < 1e-12);
    // UL: {A,B,(CDEF)} 17/63; {A,(CDEF),H} 17/63; {(G,I),J,K} 5/15
    let ul = (17.0 / 63.0 * 2.0 + 17.0 / 63.0 * 2.0 + 5.0 / 15.0 * 2.0) / 6.0;
    assert!((ul_dataset(&schema, &published.records, &w).unwrap() - ul).abs() < 1e-12);
}

fn class(schema: &Schema, id: usize, qid: [&str; 3], items: &[&str]) -> EquivalenceClass {
    EquivalenceClass {
        id,
        site_id: 0,
        relational: qid.iter().zip(schema.qids()).map(|(v, q)| node(&q.hierarchy, v)).collect(),
        item_signature: items.iter().map(|t| node(schema.items(), t)).collect(),
        support: 2,
    }
}

fn sample(schema: &Schema) -> Record {
    Record {
        id: 100,
        qid: ["25", "Male", "France"].iter().zip(schema.qids()).map(|(v, q)| node(&q.hierarchy, v)).collect(),
        items: [node(schema.items(), "A")].into(),
        label: false,
        extra: Vec::new(),
    }
}

#[test]
fn mapping_selection_worked_example() {
    let (schema, _, _) = worked_fixture();
    let t = sample(&schema);
    let m1 = class(&schema, 0, ["[21:40]", "All", "Europe"], &["A", "B", "(C,D,E,F)"]);
    let m2 = class(&schema, 1, ["[41:60]", "Female", "Africa"], &["A", "(C,D,E,F)", "H"]);
    let m3 = class(&schema, 2, ["[21:40]", "All", "Europe"], &["A"]);
    assert!(is_legitimate(&schema, &t, &m1));
    assert!(!is_legitimate(&schema, &t, &m2));
    assert!(is_legitimate(&schema, &t, &m3));
    let set = MappingSet::new(&schema, &[0, 1, 2], vec![m1, m2, m3.clone()]);
    let chosen = select_mapping(&schema, &t, &set, &WeightVector::uniform(&schema)).unwrap();
    assert_eq!((&chosen.relational, &chosen.item_signature), (&m3.relational, &m3.item_signature));
    let g = transform(&schema, &t, chosen).unwrap();
    let labels: Vec<&str> = g.qid.iter().zip(schema.qids()).map(|(&v, q)| q.hierarchy.label(v)).collect();
    assert_eq!(labels, ["[21:40]", "All", "Europe"]);
    assert_eq!(g.items, m3.item_signature);
}
