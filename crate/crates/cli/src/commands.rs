//! Subcommand implementations. Each writes into an existing run directory
//! and returns the process exit code.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use synfl::anonymizer::AnonymizedDataset;
use synfl::dataset::{load_dataset, load_generalized, load_schema, save_dataset, synth_generate, write_schema, Schema};
use synfl::flsim::{
    kfold_f1, predict, read_model, train_federated, write_model, EncodedDataset, ModelFile, ModelKind, RoundLog,
};
use synfl::mapping::{encode, map_sample, read_mappings, write_mappings, EncodingSchema, EquivalenceClass, Mapped, MappingSet};
use synfl::verifier::{verify_k_anonymity, verify_k_km, write_violations, ViolationReport};

use crate::config::ExperimentConfig;
use crate::pipeline::{
    anonymize_raw, compare, derive_seed, fl_config, load_data, prepare, run_mode, split, syntactic_from, verify_sites,
    Mode, Prepared,
};
use crate::report::{aggregate, aggregate_csv, echo, sha256_hex, summary_csv};
use crate::svg::chart_for;

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    let p = dir.join(name);
    std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

/// Split, partition and rank QIDs for one seed, as every mode does.
fn prepared(cfg: &ExperimentConfig, seed: u64) -> Result<Prepared> {
    let d = load_data(cfg, seed)?;
    let (train, test) = split(&d, cfg.data.test_fraction, derive_seed(seed, 0))?;
    prepare(cfg, &train, &test, seed)
}

/// Writes a generated dataset with its schema and hierarchy files.
pub fn cmd_synth(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<u8> {
    let s = cfg.data.synth.as_ref().ok_or_else(|| anyhow!("synth needs a [data.synth] section"))?;
    let d = synth_generate(s, seed)?;
    write_schema(dir, &d.schema)?;
    save_dataset(&dir.join("data.csv"), &d.schema, &d.records)?;
    write_text(dir, "config.toml", &cfg.to_toml())?;
    println!("wrote {} records to {}", d.len(), dir.join("data.csv").display());
    Ok(0)
}

fn write_sites(dir: &Path, schema: &Schema, outputs: &[(AnonymizedDataset, Vec<EquivalenceClass>)]) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (i, (out, _)) in outputs.iter().enumerate() {
        save_dataset(&dir.join(format!("site-{i}.csv")), schema, &out.records)?;
    }
    Ok(())
}

fn loss_csv(cfg: &ExperimentConfig, outputs: &[(AnonymizedDataset, Vec<EquivalenceClass>)]) -> String {
    let mut s = echo(&cfg.to_toml());
    s.push_str("site,records,k,m,delta,formed_clusters,merged_clusters,classes,formed_ncp,merged_ncp,u_r,u_t\n");
    for (i, (o, classes)) in outputs.iter().enumerate() {
        let st = &o.stats;
        let _ = writeln!(
            s,
            "{i},{},{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6}",
            o.records.len(),
            o.k,
            o.m,
            cfg.anonymization.delta,
            st.formed_clusters,
            st.merged_clusters,
            classes.len(),
            st.formed_ncp,
            st.merged_ncp,
            st.u_r,
            st.u_t
        );
    }
    s
}

/// The emission gate: verifies every site output independently. On any
/// violation the outputs and violation reports go to `quarantine/` and
/// `false` is returned; nothing is written at the top level.
pub fn gate(
    dir: &Path,
    schema: &Schema,
    outputs: &[(AnonymizedDataset, Vec<EquivalenceClass>)],
    m: usize,
    budget: u64,
) -> Result<bool> {
    let bad = verify_sites(schema, outputs, m, budget)?;
    if bad.is_empty() {
        return Ok(true);
    }
    let q = dir.join("quarantine");
    write_sites(&q, schema, outputs)?;
    for (site, reports) in &bad {
        write_violations(create(&q.join(format!("site-{site}.violations.csv")))?, schema, reports)?;
        eprintln!("site {site}: {} violations", reports.len());
    }
    Ok(false)
}

/// Anonymizes every site for the first k of the grid, verifies, and writes
/// the site tables, the merged mapping file, a loss report and the raw
/// held-out samples.
pub fn cmd_anonymize(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<u8> {
    let k = cfg.anonymization.k[0];
    let prep = prepared(cfg, seed)?;
    let outputs = anonymize_raw(&prep, cfg, k)?;
    write_text(dir, "config.toml", &cfg.to_toml())?;
    if !gate(dir, &prep.schema, &outputs, cfg.anonymization.m, cfg.anonymization.budget)? {
        eprintln!("verification failed; artifacts quarantined under {}", dir.join("quarantine").display());
        return Ok(1);
    }
    let loss = loss_csv(cfg, &outputs);
    write_sites(dir, &prep.schema, &outputs)?;
    let syn = syntactic_from(&prep, k, outputs)?;
    write_schema(&dir.join("schema"), &prep.schema)?;
    write_mappings(create(&dir.join("mappings.tsv"))?, &prep.schema, &syn.mapping, &prep.weights)?;
    write_text(dir, "loss.csv", &loss)?;
    save_dataset(&dir.join("test.csv"), &prep.schema, &prep.test.records)?;
    println!(
        "anonymized {} sites at k={k}: {} shared classes, u_r={:.4} u_t={:.4}, test unmapped rate {:.4}",
        prep.sites.len(),
        syn.mapping.len(),
        syn.u_r,
        syn.u_t,
        syn.unmapped_rate
    );
    Ok(0)
}

/// Checks a generalized table. Exit code 0 when anonymous, 1 on violations;
/// an exhausted budget surfaces as an error (exit code 2).
pub fn cmd_verify(schema: &Path, data: &Path, k: usize, m: usize, budget: u64, dir: &Path) -> Result<u8> {
    let schema = load_schema(schema)?;
    let d = load_generalized(data, &schema)?;
    let reports: Vec<ViolationReport> = if m == 0 {
        verify_k_anonymity(&d.records, k)
    } else {
        verify_k_km(&schema, &d.records, k, m, budget)?
    };
    write_violations(create(&dir.join("violations.csv"))?, &schema, &reports)?;
    if reports.is_empty() {
        println!("{} records are (k={k}, m={m})-anonymous", d.len());
        Ok(0)
    } else {
        println!("{} violations; see {}", reports.len(), dir.join("violations.csv").display());
        Ok(1)
    }
}

/// Training mode selected on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Central,
    Federated,
    FederatedDp,
    FederatedSyntactic,
}

impl std::str::FromStr for TrainMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "central" => Ok(TrainMode::Central),
            "federated" => Ok(TrainMode::Federated),
            "federated-dp" => Ok(TrainMode::FederatedDp),
            "federated-syntactic" => Ok(TrainMode::FederatedSyntactic),
            _ => Err(format!(
                "unknown mode `{s}` (central, federated, federated-dp, federated-syntactic)"
            )),
        }
    }
}

pub struct TrainArgs {
    pub mode: TrainMode,
    pub model: ModelKind,
    pub seed: u64,
    /// Output directory of a previous `anonymize` run (syntactic mode).
    pub input: Option<PathBuf>,
}

fn rounds_csv(log: &[RoundLog]) -> String {
    let mut s = String::from("round,site,loss,grad_norm,f1\n");
    for r in log {
        let _ = writeln!(s, "{},{},{:.6},{:.6},{:.6}", r.round, r.site, r.loss, r.grad_norm, r.f1);
    }
    s
}

fn pooled(shards: &[EncodedDataset]) -> Result<EncodedDataset> {
    let mut all = EncodedDataset::new(shards.first().map_or(0, EncodedDataset::dim));
    for s in shards {
        for i in 0..s.len() {
            all.push(s.row(i), s.label(i))?;
        }
    }
    Ok(all)
}

struct TrainResult {
    model: ModelFile,
    log: Vec<RoundLog>,
    param: String,
    holdout_f1: f64,
    unmapped_rate: f64,
    folds: Vec<f64>,
}

fn train_raw(cfg: &ExperimentConfig, args: &TrainArgs, dir: &Path) -> Result<TrainResult> {
    let prep = prepared(cfg, args.seed)?;
    let mode = match args.mode {
        TrainMode::Central => Mode::Central,
        TrainMode::Federated => Mode::Federated,
        TrainMode::FederatedDp => Mode::Dp(cfg.dp.epsilon[0]),
        TrainMode::FederatedSyntactic => unreachable!("handled by train_syntactic"),
    };
    let t = run_mode(&prep, cfg, args.model, mode, None)?;
    let fl = fl_config(cfg, args.model, prep.seed);
    let folds = kfold_f1(&pooled(&prep.raw_shards)?, &fl, cfg.folds)?;
    // a class-free mapping file carries the QID selection and weights to predict
    let selection = MappingSet::new(&prep.schema, &prep.selected, Vec::new());
    write_mappings(create(&dir.join("mappings.tsv"))?, &prep.schema, &selection, &prep.weights)?;
    write_schema(&dir.join("schema"), &prep.schema)?;
    save_dataset(&dir.join("test.csv"), &prep.schema, &prep.test.records)?;
    Ok(TrainResult {
        model: ModelFile {
            kind: args.model,
            schema_hash: prep.raw_encoding.hash(&prep.schema),
            features: prep.raw_encoding.names(&prep.schema),
            majority: prep.majority,
            params: t.model,
        },
        log: t.log,
        param: mode.param(),
        holdout_f1: t.f1,
        unmapped_rate: 0.0,
        folds,
    })
}

/// Site tables `site-0.csv`, `site-1.csv`, ... of an anonymize run.
fn site_files(input: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for i in 0.. {
        let p = input.join(format!("site-{i}.csv"));
        if !p.exists() {
            break;
        }
        files.push(p);
    }
    if files.is_empty() {
        bail!("no site-*.csv files in {}", input.display());
    }
    Ok(files)
}

fn train_syntactic(cfg: &ExperimentConfig, args: &TrainArgs) -> Result<TrainResult> {
    let input = args
        .input
        .as_deref()
        .ok_or_else(|| anyhow!("federated-syntactic needs --input <anonymize run directory>"))?;
    let schema = load_schema(&input.join("schema").join("schema.toml"))?;
    let (mapping, weights) = read_mappings(BufReader::new(open(&input.join("mappings.tsv"))?), &schema)?;
    let mut shards = Vec::new();
    let (mut n, mut pos) = (0usize, 0usize);
    for p in site_files(input)? {
        let d = load_generalized(&p, &schema)?;
        n += d.len();
        pos += d.positives();
        shards.push(
            EncodedDataset::encode(&schema, &mapping.encoding, &d.records)
                .with_context(|| format!("encoding {} with the shared mapping", p.display()))?,
        );
    }
    let majority = 2 * pos > n;
    let test = load_dataset(&input.join("test.csv"), &schema)?;
    let fl = fl_config(cfg, args.model, args.seed);
    let out = train_federated(&shards, &fl)?;
    let (mut tp, mut fp, mut fn_, mut unmapped) = (0, 0, 0, 0);
    for t in &test.records {
        let (x, was_unmapped) = match map_sample(&schema, t, &mapping, &weights)? {
            Mapped::Class { record, .. } => (encode(&schema, &mapping.encoding, &record).ok(), false),
            Mapped::Unmapped { record } => (encode(&schema, &mapping.encoding, &record).ok(), true),
        };
        unmapped += usize::from(was_unmapped);
        let p = x.map_or(majority, |x| predict(&out.model, &x));
        match (p, t.label) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    let folds = kfold_f1(&pooled(&shards)?, &fl, cfg.folds)?;
    let k = std::fs::read_to_string(input.join("loss.csv"))
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| !l.starts_with('#') && !l.starts_with("site"))
                .and_then(|l| l.split(',').nth(2).map(str::to_string))
        })
        .map_or(String::new(), |k| format!("k={k}"));
    Ok(TrainResult {
        model: ModelFile {
            kind: args.model,
            schema_hash: mapping.encoding.hash(&schema),
            features: mapping.encoding.names(&schema),
            majority,
            params: out.model,
        },
        log: out.log,
        param: k,
        holdout_f1: synfl::flsim::f1_score(tp, fp, fn_),
        unmapped_rate: unmapped as f64 / test.len().max(1) as f64,
        folds,
    })
}

fn open(p: &Path) -> Result<File> {
    File::open(p).with_context(|| format!("opening {}", p.display()))
}

/// Trains one model and writes `model.txt`, `rounds.csv` and `metrics.csv`.
pub fn cmd_train(cfg: &ExperimentConfig, args: &TrainArgs, dir: &Path) -> Result<u8> {
    let r = match args.mode {
        TrainMode::FederatedSyntactic => train_syntactic(cfg, args)?,
        _ => train_raw(cfg, args, dir)?,
    };
    write_model(create(&dir.join("model.txt"))?, &r.model)?;
    write_text(dir, "rounds.csv", &rounds_csv(&r.log))?;
    let mut m = echo(&cfg.to_toml());
    m.push_str("seed,model,mode,param,holdout_f1,unmapped_rate,cv_mean_f1,cv_fold_f1\n");
    let mean = r.folds.iter().sum::<f64>() / r.folds.len().max(1) as f64;
    let folds: Vec<String> = r.folds.iter().map(|f| format!("{f:.6}")).collect();
    let mode = match args.mode {
        TrainMode::Central => "central",
        TrainMode::Federated => "federated",
        TrainMode::FederatedDp => "federated-dp",
        TrainMode::FederatedSyntactic => "federated-syntactic",
    };
    let _ = writeln!(
        m,
        "{},{},{mode},{},{:.6},{:.6},{mean:.6},{}",
        args.seed,
        args.model,
        r.param,
        r.holdout_f1,
        r.unmapped_rate,
        folds.join(";")
    );
    write_text(dir, "metrics.csv", &m)?;
    write_text(dir, "config.toml", &cfg.to_toml())?;
    println!(
        "{mode} {}: held-out F1 {:.4}, {}-fold CV mean F1 {mean:.4}",
        args.model,
        r.holdout_f1,
        r.folds.len()
    );
    Ok(0)
}

/// Scores a samples file with a trained model. Each sample is placed under
/// the shared mapping when the model was trained on anonymized data.
pub fn cmd_predict(model: &Path, mappings: &Path, schema: &Path, samples: &Path, dir: &Path) -> Result<u8> {
    if !mappings.exists() {
        bail!("mapping file {} does not exist", mappings.display());
    }
    let model_bytes = std::fs::read(model).with_context(|| format!("reading {}", model.display()))?;
    let mf = read_model(model_bytes.as_slice())?;
    let schema: Arc<Schema> = load_schema(schema)?;
    let mapping_bytes = std::fs::read(mappings).with_context(|| format!("reading {}", mappings.display()))?;
    let (set, weights) = read_mappings(mapping_bytes.as_slice(), &schema)?;
    let leaves = EncodingSchema::leaves(&schema, set.encoding.selected());
    let raw = if mf.schema_hash == leaves.hash(&schema) {
        true
    } else if mf.schema_hash == set.encoding.hash(&schema) {
        false
    } else {
        return Err(synfl::Error::HashMismatch {
            expected: mf.schema_hash.clone(),
            found: set.encoding.hash(&schema),
        }
        .into());
    };
    let d = load_dataset(samples, &schema)?;
    let mut s = String::new();
    let _ = writeln!(s, "# model {}", sha256_hex(&model_bytes));
    let _ = writeln!(s, "# mappings {}", sha256_hex(&mapping_bytes));
    s.push_str("id,class_id,predicted,unmapped\n");
    let mut unmapped = 0usize;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for t in &d.records {
        let (class, x, flag) = if raw {
            (None, encode(&schema, &leaves, t).ok(), false)
        } else {
            match map_sample(&schema, t, &set, &weights)? {
                Mapped::Class { class_id, record } => (Some(class_id), encode(&schema, &set.encoding, &record).ok(), false),
                Mapped::Unmapped { record } => (None, encode(&schema, &set.encoding, &record).ok(), true),
            }
        };
        unmapped += usize::from(flag);
        let p = x.map_or(mf.majority, |x| predict(&mf.params, &x));
        match (p, t.label) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
        let _ = writeln!(
            s,
            "{},{},{},{}",
            t.id,
            class.map_or(String::new(), |c| c.to_string()),
            u8::from(p),
            u8::from(flag)
        );
    }
    let rate = unmapped as f64 / d.len().max(1) as f64;
    let _ = writeln!(s, "summary,,,{rate:.6}");
    write_text(dir, "predictions.csv", &s)?;
    println!(
        "{} samples, unmapped rate {rate:.4}, F1 against file labels {:.4}",
        d.len(),
        synfl::flsim::f1_score(tp, fp, fn_)
    );
    Ok(0)
}

/// Runs the whole grid and writes per-cell results, mean/std aggregates and
/// the two charts.
pub fn cmd_compare(cfg: &ExperimentConfig, dir: &Path) -> Result<u8> {
    let rows = compare(cfg)?;
    let toml = cfg.to_toml();
    write_text(dir, "config.toml", &toml)?;
    write_text(dir, "summary.csv", &summary_csv(&toml, &rows))?;
    let groups = aggregate(&rows);
    write_text(dir, "aggregate.csv", &aggregate_csv(&toml, &groups))?;
    write_text(
        dir,
        "f1_vs_k.svg",
        &chart_for(&groups, "federated-syntactic", "k", "Syntactic FL: mean F1 vs k", false),
    )?;
    write_text(
        dir,
        "f1_vs_epsilon.svg",
        &chart_for(&groups, "federated-dp", "epsilon", "DP FL: mean F1 vs epsilon", true),
    )?;
    let failed = rows.iter().filter(|r| r.f1.is_none()).count();
    let mut out = std::io::stdout().lock();
    for g in &groups {
        if g.n == 0 {
            let _ = writeln!(out, "{:<8} {:<20} {:<14} no successful cells", g.model, g.mode, g.param);
            continue;
        }
        let _ = writeln!(
            out,
            "{:<8} {:<20} {:<14} mean F1 {:.4} (sd {:.4}, n={})",
            g.model, g.mode, g.param, g.mean_f1, g.std_f1, g.n
        );
    }
    if failed > 0 {
        let _ = writeln!(out, "{failed} of {} cells failed; see summary.csv", rows.len());
    }
    Ok(0)
}
