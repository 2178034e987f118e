//! The experiment pipeline: split, partition across sites, rank QIDs,
//! anonymize, share mappings and train in each mode.

use std::fmt;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use synfl::anonymizer::{anonymize, AnonymizationParams, AnonymizedDataset};
use synfl::dataset::{load_dataset, load_schema, synth_generate, RTDataset, Schema};
use synfl::flsim::{
    f1_score, holdout_split, partition, predict, train_centralized, train_dp, train_federated, DPConfig,
    EncodedDataset, FLConfig, ModelKind, ModelParams, RoundLog,
};
use synfl::mapping::{encode, map_sample, merge_mappings, EncodingSchema, EquivalenceClass, Mapped, MappingSet};
use synfl::metrics::{feature_importance, select_qids, WeightVector};
use synfl::verifier::{verify_k_anonymity, verify_k_km, ViolationReport};

use crate::config::{ExperimentConfig, WeightSource};

/// Training mode of one experiment cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Central,
    Federated,
    Dp(f64),
    Syntactic(usize),
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Central => "central",
            Mode::Federated => "federated",
            Mode::Dp(_) => "federated-dp",
            Mode::Syntactic(_) => "federated-syntactic",
        }
    }

    /// Grid parameter as written in reports; empty for the baselines.
    pub fn param(&self) -> String {
        match self {
            Mode::Central | Mode::Federated => String::new(),
            Mode::Dp(e) => format!("epsilon={e}"),
            Mode::Syntactic(k) => format!("k={k}"),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Central | Mode::Federated => f.write_str(self.name()),
            _ => write!(f, "{}({})", self.name(), self.param()),
        }
    }
}

/// Derives a sub-seed; distinct `(seed, salt)` pairs give unrelated values.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Records for one seed: generated, or the configured file.
pub fn load_data(cfg: &ExperimentConfig, seed: u64) -> Result<RTDataset> {
    if let Some(s) = &cfg.data.synth {
        return Ok(synth_generate(s, seed)?);
    }
    let (schema, data) = match (&cfg.data.schema, &cfg.data.dataset) {
        (Some(s), Some(d)) => (s, d),
        _ => bail!("no data source configured"),
    };
    let schema = load_schema(schema)?;
    Ok(load_dataset(data, &schema)?)
}

/// Stratified train/test split of a dataset.
pub fn split(d: &RTDataset, test_fraction: f64, seed: u64) -> Result<(RTDataset, RTDataset)> {
    let labels: Vec<bool> = d.records.iter().map(|r| r.label).collect();
    let (tr, te) = holdout_split(&labels, test_fraction, seed)?;
    Ok((d.subset(&tr), d.subset(&te)))
}

/// Everything the training modes share for one seed.
pub struct Prepared {
    pub seed: u64,
    pub schema: Arc<Schema>,
    pub sites: Vec<RTDataset>,
    pub test: RTDataset,
    pub weights: WeightVector,
    /// Indices into the schema's QIDs used as model features.
    pub selected: Vec<usize>,
    pub raw_encoding: EncodingSchema,
    pub raw_shards: Vec<EncodedDataset>,
    pub raw_test: EncodedDataset,
    pub majority: bool,
}

/// Averages per-site permutation importances at the coordinator; sites
/// too small to estimate importance are skipped.
fn global_weights(cfg: &ExperimentConfig, sites: &[RTDataset], seed: u64) -> Result<WeightVector> {
    let schema = &sites[0].schema;
    if cfg.anonymization.weights == WeightSource::Uniform {
        return Ok(WeightVector::uniform(schema));
    }
    let mut sum = vec![0.0; schema.qids().len()];
    let mut used = 0;
    for (i, site) in sites.iter().enumerate() {
        let icfg = synfl::metrics::ImportanceConfig {
            seed: derive_seed(seed, 100 + i as u64),
            ..cfg.anonymization.importance.clone()
        };
        if let Ok(fi) = feature_importance(site, &icfg) {
            for (s, w) in sum.iter_mut().zip(fi.weights.relational()) {
                *s += w;
            }
            used += 1;
        }
    }
    if used == 0 {
        return Ok(WeightVector::uniform(schema));
    }
    Ok(WeightVector::from_relational(schema, &sum)?)
}

pub fn prepare(cfg: &ExperimentConfig, train: &RTDataset, test: &RTDataset, seed: u64) -> Result<Prepared> {
    let schema = Arc::clone(&train.schema);
    let sites = partition(train, cfg.fl.num_sites, derive_seed(seed, 1))?;
    let weights = global_weights(cfg, &sites, seed)?;
    let top_n = match cfg.anonymization.top_n {
        0 => schema.qids().len(),
        n => n,
    };
    let mut selected: Vec<usize> = select_qids(&weights, top_n)?
        .iter()
        .map(|n| schema.qid_index(n).expect("selected QID exists"))
        .collect();
    selected.sort_unstable();
    let raw_encoding = EncodingSchema::leaves(&schema, &selected);
    let raw_shards = sites
        .iter()
        .map(|s| EncodedDataset::encode(&schema, &raw_encoding, &s.records))
        .collect::<synfl::Result<Vec<_>>>()?;
    let raw_test = EncodedDataset::encode(&schema, &raw_encoding, &test.records)?;
    let positives: usize = sites.iter().map(RTDataset::positives).sum();
    let majority = 2 * positives > train.len();
    Ok(Prepared {
        seed,
        schema,
        sites,
        test: test.clone(),
        weights,
        selected,
        raw_encoding,
        raw_shards,
        raw_test,
        majority,
    })
}

/// Anonymized sites and the shared mapping for one k.
pub struct SyntacticSites {
    pub k: usize,
    pub anonymized: Vec<AnonymizedDataset>,
    pub mapping: MappingSet,
    pub shards: Vec<EncodedDataset>,
    /// Encoded test rows; `None` when the sample could not be placed.
    pub test_rows: Vec<Option<Vec<f64>>>,
    pub class_ids: Vec<Option<usize>>,
    pub unmapped_rate: f64,
    pub u_r: f64,
    pub u_t: f64,
}

/// Anonymizes every site's shard with the shared weights. Class site ids
/// are set to the site index.
pub fn anonymize_raw(
    prep: &Prepared,
    cfg: &ExperimentConfig,
    k: usize,
) -> Result<Vec<(AnonymizedDataset, Vec<EquivalenceClass>)>> {
    let a = &cfg.anonymization;
    prep.sites
        .iter()
        .enumerate()
        .map(|(i, site)| {
            let p = AnonymizationParams {
                k,
                m: a.m,
                delta: a.delta,
                weights: prep.weights.clone(),
                seed: derive_seed(prep.seed, 1000 + i as u64),
            };
            let (out, mut classes) = anonymize(site, &p).with_context(|| format!("anonymizing site {i}"))?;
            classes.iter_mut().for_each(|c| c.site_id = i);
            Ok((out, classes))
        })
        .collect()
}

/// Independent (k,k^m) check of every site's output; returns the
/// violations per site (empty when all pass). m = 0 checks k only.
pub fn verify_sites(
    schema: &Schema,
    outputs: &[(AnonymizedDataset, Vec<EquivalenceClass>)],
    m: usize,
    budget: u64,
) -> synfl::Result<Vec<(usize, Vec<ViolationReport>)>> {
    let mut bad = Vec::new();
    for (i, (out, _)) in outputs.iter().enumerate() {
        let v = if m == 0 {
            verify_k_anonymity(&out.records, out.k)
        } else {
            verify_k_km(schema, &out.records, out.k, m, budget)?
        };
        if !v.is_empty() {
            bad.push((i, v));
        }
    }
    Ok(bad)
}

/// Anonymizes every site, verifies each output, merges the shared
/// mappings and places the test samples under them.
pub fn anonymize_sites(prep: &Prepared, cfg: &ExperimentConfig, k: usize) -> Result<SyntacticSites> {
    let outputs = anonymize_raw(prep, cfg, k)?;
    let bad = verify_sites(&prep.schema, &outputs, cfg.anonymization.m, cfg.anonymization.budget)?;
    if let Some((i, v)) = bad.first() {
        bail!("site {i}: {} violations after anonymization", v.len());
    }
    syntactic_from(prep, k, outputs)
}

/// Merges verified site outputs and maps the test samples.
pub fn syntactic_from(
    prep: &Prepared,
    k: usize,
    outputs: Vec<(AnonymizedDataset, Vec<EquivalenceClass>)>,
) -> Result<SyntacticSites> {
    let schema = &prep.schema;
    let (anonymized, sets): (Vec<_>, Vec<_>) = outputs
        .into_iter()
        .map(|(out, classes)| {
            let set = MappingSet::new(schema, &prep.selected, classes);
            (out, set)
        })
        .unzip();
    let mapping = merge_mappings(schema, &sets)?;
    let shards = anonymized
        .iter()
        .map(|o| EncodedDataset::encode(schema, &mapping.encoding, &o.records))
        .collect::<synfl::Result<Vec<_>>>()?;

    let mut test_rows = Vec::with_capacity(prep.test.len());
    let mut class_ids = Vec::with_capacity(prep.test.len());
    let mut unmapped = 0usize;
    for t in &prep.test.records {
        match map_sample(schema, t, &mapping, &prep.weights)? {
            Mapped::Class { class_id, record } => {
                test_rows.push(Some(encode(schema, &mapping.encoding, &record)?));
                class_ids.push(Some(class_id));
            }
            Mapped::Unmapped { record } => {
                unmapped += 1;
                test_rows.push(encode(schema, &mapping.encoding, &record).ok());
                class_ids.push(None);
            }
        }
    }
    let n: usize = anonymized.iter().map(|o| o.records.len()).sum();
    let u_r = anonymized.iter().map(|o| o.stats.u_r * o.records.len() as f64).sum::<f64>() / n as f64;
    let u_t = anonymized.iter().map(|o| o.stats.u_t * o.records.len() as f64).sum::<f64>() / n as f64;
    Ok(SyntacticSites {
        k,
        anonymized,
        mapping,
        shards,
        test_rows,
        class_ids,
        unmapped_rate: unmapped as f64 / prep.test.len().max(1) as f64,
        u_r,
        u_t,
    })
}

/// Outcome of one training run.
#[derive(Debug, Clone)]
pub struct Trained {
    pub model: ModelParams,
    pub log: Vec<RoundLog>,
    pub f1: f64,
    pub unmapped_rate: f64,
}

pub fn fl_config(cfg: &ExperimentConfig, model: ModelKind, seed: u64) -> FLConfig {
    FLConfig {
        model,
        seed: derive_seed(seed, 7),
        ..cfg.fl.clone()
    }
}

fn f1_of(preds: impl Iterator<Item = bool>, labels: impl Iterator<Item = bool>) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (p, y) in preds.zip(labels) {
        match (p, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    f1_score(tp, fp, fn_)
}

/// Trains one model in one mode and scores it on the prepared test split.
/// `syn` must hold the anonymized sites for syntactic modes.
pub fn run_mode(
    prep: &Prepared,
    cfg: &ExperimentConfig,
    model: ModelKind,
    mode: Mode,
    syn: Option<&SyntacticSites>,
) -> Result<Trained> {
    let fl = fl_config(cfg, model, prep.seed);
    let raw_eval = |out: synfl::flsim::TrainOutput| {
        let f1 = f1_of(
            (0..prep.raw_test.len()).map(|i| predict(&out.model, prep.raw_test.row(i))),
            prep.raw_test.labels().iter().copied(),
        );
        Trained {
            model: out.model,
            log: out.log,
            f1,
            unmapped_rate: 0.0,
        }
    };
    match mode {
        Mode::Central => {
            let mut all = EncodedDataset::new(prep.raw_encoding.len());
            for s in &prep.raw_shards {
                for i in 0..s.len() {
                    all.push(s.row(i), s.label(i))?;
                }
            }
            Ok(raw_eval(train_centralized(&all, &fl)?))
        }
        Mode::Federated => Ok(raw_eval(train_federated(&prep.raw_shards, &fl)?)),
        Mode::Dp(epsilon) => {
            let dp = DPConfig {
                epsilon,
                clip_norm: cfg.dp.clip_norm,
                learning_rate: cfg.dp.learning_rate,
            };
            Ok(raw_eval(train_dp(&prep.raw_shards, &fl, &dp)?))
        }
        Mode::Syntactic(k) => {
            let syn = syn.filter(|s| s.k == k).ok_or_else(|| anyhow!("no anonymized sites for k={k}"))?;
            let out = train_federated(&syn.shards, &fl)?;
            let preds = syn
                .test_rows
                .iter()
                .map(|r| r.as_ref().map_or(prep.majority, |x| predict(&out.model, x)));
            let f1 = f1_of(preds, prep.test.records.iter().map(|r| r.label));
            Ok(Trained {
                model: out.model,
                log: out.log,
                f1,
                unmapped_rate: syn.unmapped_rate,
            })
        }
    }
}

/// One row of the comparison summary.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub seed: u64,
    pub model: ModelKind,
    pub mode: &'static str,
    pub param: String,
    pub f1: Option<f64>,
    pub unmapped_rate: Option<f64>,
    pub u_r: Option<f64>,
    pub u_t: Option<f64>,
    /// `ok`, or the error that stopped the cell.
    pub status: String,
}

/// Modes run for every seed and model, in report order.
pub fn grid(cfg: &ExperimentConfig) -> Vec<Mode> {
    let mut modes = vec![Mode::Central, Mode::Federated];
    modes.extend(cfg.dp.epsilon.iter().map(|&e| Mode::Dp(e)));
    modes.extend(cfg.anonymization.k.iter().map(|&k| Mode::Syntactic(k)));
    modes
}

fn seed_cells(cfg: &ExperimentConfig, seed: u64) -> Vec<CellResult> {
    let modes = grid(cfg);
    let failed = |e: &anyhow::Error| -> Vec<CellResult> {
        cfg.models
            .iter()
            .flat_map(|&model| {
                modes.iter().map(move |m| CellResult {
                    seed,
                    model,
                    mode: m.name(),
                    param: m.param(),
                    f1: None,
                    unmapped_rate: None,
                    u_r: None,
                    u_t: None,
                    status: format!("error: {e:#}"),
                })
            })
            .collect()
    };
    let prep = match load_data(cfg, seed)
        .and_then(|d| split(&d, cfg.data.test_fraction, derive_seed(seed, 0)))
        .and_then(|(tr, te)| prepare(cfg, &tr, &te, seed))
    {
        Ok(p) => p,
        Err(e) => return failed(&e),
    };
    let syntactic: Vec<(usize, Result<SyntacticSites>)> = cfg
        .anonymization
        .k
        .iter()
        .map(|&k| (k, anonymize_sites(&prep, cfg, k)))
        .collect();

    let mut rows = Vec::new();
    for &model in &cfg.models {
        for mode in &modes {
            let syn = match mode {
                Mode::Syntactic(k) => syntactic.iter().find(|(kk, _)| kk == k).map(|(_, s)| s),
                _ => None,
            };
            let result = match syn {
                Some(Err(e)) => Err(anyhow!("{e:#}")),
                Some(Ok(s)) => run_mode(&prep, cfg, model, *mode, Some(s)).map(|t| (t, Some((s.u_r, s.u_t)))),
                None => run_mode(&prep, cfg, model, *mode, None).map(|t| (t, None)),
            };
            rows.push(match result {
                Ok((t, losses)) => CellResult {
                    seed,
                    model,
                    mode: mode.name(),
                    param: mode.param(),
                    f1: Some(t.f1),
                    unmapped_rate: Some(t.unmapped_rate),
                    u_r: losses.map(|l| l.0),
                    u_t: losses.map(|l| l.1),
                    status: "ok".into(),
                },
                Err(e) => CellResult {
                    seed,
                    model,
                    mode: mode.name(),
                    param: mode.param(),
                    f1: None,
                    unmapped_rate: None,
                    u_r: None,
                    u_t: None,
                    status: format!("error: {e:#}"),
                },
            });
        }
    }
    rows
}

/// Runs every (seed, model, mode) cell. Failed cells are reported in their
/// row and do not stop the sweep. Rows come back in seed, model, grid order.
pub fn compare(cfg: &ExperimentConfig) -> Result<Vec<CellResult>> {
    cfg.validate()?;
    let per_seed: Vec<Vec<CellResult>> = cfg.seeds.par_iter().map(|&s| seed_cells(cfg, s)).collect();
    Ok(per_seed.into_iter().flatten().collect())
}
