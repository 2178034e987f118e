use std::path::{Path, PathBuf};
use std::process::Command;

use synfl::dataset::{load_dataset, load_schema, save_dataset, synth_generate, SynthConfig};
use synfl::flsim::{read_model, train_centralized, EncodedDataset};
use synfl::flsim::{write_model, ModelFile, ModelKind, ModelParams};
use synfl::mapping::write_mappings;
use synfl::{EquivalenceClass, MappingSet, WeightVector};
use synfl::metrics::ncp_dataset;
use synfl_cli::commands::{cmd_anonymize, cmd_compare, cmd_predict, cmd_synth, cmd_train, gate, TrainArgs, TrainMode};
use synfl_cli::config::{ExperimentConfig, WeightSource};
use synfl_cli::pipeline::{anonymize_raw, compare, derive_seed, fl_config, load_data, prepare, split};
use tempfile::TempDir;

fn small() -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        seeds: vec![1],
        ..ExperimentConfig::default()
    };
    cfg.data.synth = Some(SynthConfig {
        records: 600,
        ..SynthConfig::default()
    });
    cfg.fl.num_sites = 3;
    cfg.fl.rounds = 3;
    cfg.fl.local_epochs = 2;
    cfg.anonymization.k = vec![3];
    cfg.anonymization.weights = WeightSource::Uniform;
    cfg.dp.epsilon = vec![0.5];
    cfg.folds = 3;
    cfg
}

fn subdir(t: &TempDir, name: &str) -> PathBuf {
    let p = t.path().join(name);
    std::fs::create_dir_all(&p).unwrap();
    p
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

/// Data rows of a CSV with `#` echo lines, header dropped.
fn rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn synth_is_deterministic_and_reloads() {
    let t = TempDir::new().unwrap();
    let cfg = small();
    let (a, b) = (subdir(&t, "a"), subdir(&t, "b"));
    cmd_synth(&cfg, 4, &a).unwrap();
    cmd_synth(&cfg, 4, &b).unwrap();
    assert_eq!(read(&a.join("data.csv")), read(&b.join("data.csv")));
    let schema = load_schema(&a.join("schema.toml")).unwrap();
    let back = load_dataset(&a.join("data.csv"), &schema).unwrap();
    let orig = synth_generate(cfg.data.synth.as_ref().unwrap(), 4).unwrap();
    assert_eq!(back.records, orig.records);
}

#[test]
fn k_above_site_size_is_an_error() {
    let t = TempDir::new().unwrap();
    let mut cfg = small();
    cfg.anonymization.k = vec![1000];
    assert!(cmd_anonymize(&cfg, 1, &subdir(&t, "run")).is_err());
}

#[test]
fn gate_quarantines_tampered_outputs() {
    let t = TempDir::new().unwrap();
    let dir = subdir(&t, "run");
    let cfg = small();
    let d = load_data(&cfg, 1).unwrap();
    let (tr, te) = split(&d, 0.3, derive_seed(1, 0)).unwrap();
    let prep = prepare(&cfg, &tr, &te, 1).unwrap();
    let mut outputs = anonymize_raw(&prep, &cfg, 3).unwrap();
    assert!(gate(&dir, &prep.schema, &outputs, 2, cfg.anonymization.budget).unwrap());
    assert!(!dir.join("quarantine").exists());

    let h = &prep.schema.qids()[0].hierarchy;
    let recs = &mut outputs[0].0.records;
    let unused = *h.leaves().iter().find(|&&l| recs.iter().all(|r| r.qid[0] != l)).unwrap();
    recs[0].qid[0] = unused;
    assert!(!gate(&dir, &prep.schema, &outputs, 2, cfg.anonymization.budget).unwrap());
    assert!(dir.join("quarantine/site-0.csv").exists());
    assert!(dir.join("quarantine/site-0.violations.csv").exists());
    assert!(!dir.join("quarantine/site-1.violations.csv").exists());
}

#[test]
fn anonymize_respects_delta_in_loss_report() {
    let t = TempDir::new().unwrap();
    let dir = subdir(&t, "run");
    let mut cfg = small();
    cfg.anonymization.delta = 0.5;
    assert_eq!(cmd_anonymize(&cfg, 1, &dir).unwrap(), 0);
    for name in ["site-0.csv", "site-2.csv", "mappings.tsv", "test.csv", "schema/schema.toml"] {
        assert!(dir.join(name).exists(), "{name}");
    }
    let loss = rows(&read(&dir.join("loss.csv")));
    assert_eq!(loss.len(), 3);
    for r in &loss {
        let formed: f64 = r[8].parse().unwrap();
        let merged: f64 = r[9].parse().unwrap();
        if formed <= 0.5 {
            assert!(merged <= 0.5 + 1e-6, "{r:?}");
        }
    }
    // the report agrees with the published site table
    let schema = load_schema(&dir.join("schema/schema.toml")).unwrap();
    let site = synfl::dataset::load_generalized(&dir.join("site-0.csv"), &schema).unwrap();
    let w = synfl::WeightVector::uniform(&schema);
    let ncp = ncp_dataset(&schema, &site.records, &w).unwrap();
    assert!((ncp - loss[0][9].parse::<f64>().unwrap()).abs() < 1e-5);
}

#[test]
fn central_train_matches_library() {
    let t = TempDir::new().unwrap();
    let dir = subdir(&t, "run");
    let cfg = small();
    let args = TrainArgs {
        mode: TrainMode::Central,
        model: cfg.models[0],
        seed: 1,
        input: None,
    };
    assert_eq!(cmd_train(&cfg, &args, &dir).unwrap(), 0);
    let mf = read_model(read(&dir.join("model.txt")).as_bytes()).unwrap();

    let d = load_data(&cfg, 1).unwrap();
    let (tr, te) = split(&d, cfg.data.test_fraction, derive_seed(1, 0)).unwrap();
    let prep = prepare(&cfg, &tr, &te, 1).unwrap();
    let mut all = EncodedDataset::new(prep.raw_encoding.len());
    for s in &prep.raw_shards {
        for i in 0..s.len() {
            all.push(s.row(i), s.label(i)).unwrap();
        }
    }
    let lib = train_centralized(&all, &fl_config(&cfg, cfg.models[0], 1)).unwrap();
    assert_eq!(mf.params.weights.len(), lib.model.weights.len());
    for (a, b) in mf.params.weights.iter().zip(&lib.model.weights) {
        assert!((a - b).abs() < 1e-12);
    }
    let m = rows(&read(&dir.join("metrics.csv")));
    assert_eq!(m[0][7].split(';').count(), 3);
}

#[test]
fn ten_site_run_logs_every_site_each_round() {
    let t = TempDir::new().unwrap();
    let dir = subdir(&t, "run");
    let mut cfg = small();
    cfg.data.synth.as_mut().unwrap().records = 1500;
    cfg.fl.num_sites = 10;
    let args = TrainArgs {
        mode: TrainMode::Federated,
        model: cfg.models[0],
        seed: 1,
        input: None,
    };
    cmd_train(&cfg, &args, &dir).unwrap();
    let text = read(&dir.join("rounds.csv"));
    let log: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(log.len(), 10 * cfg.fl.rounds);
    for round in 0..cfg.fl.rounds {
        let sites = log.iter().filter(|l| l.split(',').next() == Some(&round.to_string())).count();
        assert_eq!(sites, 10, "round {round}");
    }
}

#[test]
fn predict_maps_training_records_and_counts_fallbacks() {
    let t = TempDir::new().unwrap();
    let anon = subdir(&t, "anon");
    let train = subdir(&t, "train");
    let mut cfg = small();
    cfg.data.synth.as_mut().unwrap().records = 3000;
    cmd_anonymize(&cfg, 1, &anon).unwrap();
    let args = TrainArgs {
        mode: TrainMode::FederatedSyntactic,
        model: cfg.models[0],
        seed: 1,
        input: Some(anon.clone()),
    };
    cmd_train(&cfg, &args, &train).unwrap();

    // raw training records of site 0
    let d = load_data(&cfg, 1).unwrap();
    let (tr, te) = split(&d, cfg.data.test_fraction, derive_seed(1, 0)).unwrap();
    let prep = prepare(&cfg, &tr, &te, 1).unwrap();
    let schema_path = anon.join("schema/schema.toml");
    let samples = prep.sites[0].records.clone();
    let samples_path = t.path().join("samples.csv");
    save_dataset(&samples_path, &prep.schema, &samples).unwrap();

    let out = subdir(&t, "predict");
    cmd_predict(&train.join("model.txt"), &anon.join("mappings.tsv"), &schema_path, &samples_path, &out).unwrap();
    let (preds, rate) = predictions(&out);
    assert_eq!(preds.len(), samples.len());
    assert!(preds.iter().all(|p| !p[1].is_empty() && p[3] == "0"), "training records always map");
    assert_eq!(rate, 0.0);

    // one shared class cut from a single record: that record maps to it,
    // a record with another age falls back and is counted
    let schema = load_schema(&schema_path).unwrap();
    let t0 = &samples[0];
    let class = EquivalenceClass {
        id: 0,
        site_id: 0,
        relational: t0.qid.clone(),
        item_signature: t0.items.clone(),
        support: 1,
    };
    let all: Vec<usize> = (0..schema.qids().len()).collect();
    let set = MappingSet::new(&schema, &all, vec![class]);
    let w = WeightVector::uniform(&schema);
    let one = t.path().join("one.tsv");
    write_mappings(std::fs::File::create(&one).unwrap(), &schema, &set, &w).unwrap();
    let mf = ModelFile {
        kind: ModelKind::Logreg,
        schema_hash: set.encoding.hash(&schema),
        features: set.encoding.names(&schema),
        majority: false,
        params: ModelParams::zeros(set.encoding.len()),
    };
    let one_model = t.path().join("one-model.txt");
    write_model(std::fs::File::create(&one_model).unwrap(), &mf).unwrap();
    let mut other = t0.clone();
    other.id = 999_999;
    let age = &schema.qids()[0].hierarchy;
    other.qid[0] = *age.leaves().iter().find(|&&l| l != t0.qid[0]).unwrap();
    let pair = t.path().join("pair.csv");
    save_dataset(&pair, &schema, &[t0.clone(), other]).unwrap();
    let out = subdir(&t, "predict-one");
    cmd_predict(&one_model, &one, &schema_path, &pair, &out).unwrap();
    let (preds, rate) = predictions(&out);
    assert_eq!(preds[0][1..], ["0", "0", "0"]);
    assert_eq!(preds[1][..], ["999999", "", "0", "1"]);
    assert!((rate - 0.5).abs() < 1e-12);

    // a model whose schema hash matches neither encoding is refused
    let bad = read(&train.join("model.txt"))
        .lines()
        .map(|l| if l.starts_with("schema\t") { "schema\tdeadbeef".to_string() } else { l.to_string() })
        .collect::<Vec<_>>()
        .join("\n");
    let bad_path = t.path().join("bad-model.txt");
    std::fs::write(&bad_path, bad).unwrap();
    let err = cmd_predict(&bad_path, &anon.join("mappings.tsv"), &schema_path, &samples_path, &subdir(&t, "p2")).unwrap_err();
    assert!(matches!(err.downcast_ref::<synfl::Error>(), Some(synfl::Error::HashMismatch { .. })), "{err:#}");
    let missing = cmd_predict(&train.join("model.txt"), &t.path().join("nope.tsv"), &schema_path, &samples_path, &out);
    assert!(missing.is_err());
}

#[test]
fn compare_row_counts() {
    let mut cfg = small();
    cfg.seeds = vec![1, 2];
    cfg.anonymization.k = vec![3, 5];
    let r = compare(&cfg).unwrap();
    assert_eq!(r.len(), 2 * (2 + 1 + 2));
    assert!(r.iter().all(|c| c.status == "ok"), "{r:?}");

    let cfg = small();
    let r = compare(&cfg).unwrap();
    let modes: Vec<&str> = r.iter().map(|c| c.mode).collect();
    assert_eq!(modes, ["central", "federated", "federated-dp", "federated-syntactic"]);
}

#[test]
fn compare_rerun_is_identical_and_records_failures() {
    let t = TempDir::new().unwrap();
    let mut cfg = small();
    cfg.anonymization.k = vec![3, 5000];
    let (a, b) = (subdir(&t, "a"), subdir(&t, "b"));
    cmd_compare(&cfg, &a).unwrap();
    cmd_compare(&cfg, &b).unwrap();
    for f in ["summary.csv", "aggregate.csv", "f1_vs_k.svg", "f1_vs_epsilon.svg"] {
        assert_eq!(read(&a.join(f)), read(&b.join(f)), "{f}");
    }
    let s = rows(&read(&a.join("summary.csv")));
    assert_eq!(s.len(), 5);
    let bad: Vec<_> = s.iter().filter(|r| r[8] != "ok").collect();
    assert_eq!(bad.len(), 1);
    assert_eq!(bad[0][3], "k=5000");
    assert!(bad[0][4].is_empty());
}

/// Prediction rows and the unmapped rate from the summary row.
fn predictions(dir: &Path) -> (Vec<Vec<String>>, f64) {
    let mut r = rows(&read(&dir.join("predictions.csv")));
    let summary = r.pop().unwrap();
    assert_eq!(summary[0], "summary");
    (r, summary[3].parse().unwrap())
}

fn synfl() -> Command {
    Command::new(env!("CARGO_BIN_EXE_synfl"))
}

#[test]
fn binary_exit_codes() {
    let t = TempDir::new().unwrap();
    let fx = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/worked");
    let verify = |k: &str, budget: &str, name: &str| {
        synfl()
            .args(["verify", "--schema"])
            .arg(fx.join("schema.toml"))
            .arg("--data")
            .arg(fx.join("published.csv"))
            .args(["--k", k, "--m", "3", "--budget", budget, "--run-name", name, "--out"])
            .arg(t.path())
            .output()
            .unwrap()
            .status
            .code()
    };
    assert_eq!(verify("2", "1000000", "ok"), Some(0));
    assert_eq!(verify("3", "1000000", "bad"), Some(1));
    assert_eq!(verify("2", "3", "budget"), Some(2));
    assert!(t.path().join("ok/manifest.txt").exists());
    assert!(t.path().join("bad/violations.csv").exists());

    let st = synfl().args(["train", "--mode", "sideways"]).output().unwrap();
    assert!(!st.status.success());
    let st = synfl()
        .args(["synth", "--records", "200", "--seeds", "3", "--run-name", "s", "--out"])
        .arg(t.path())
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(0), "{}", String::from_utf8_lossy(&st.stderr));
    assert!(t.path().join("s/data.csv").exists());
}
