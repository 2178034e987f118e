//! Run directories, config overrides and exit codes.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use synfl::flsim::ModelKind;

use crate::config::ExperimentConfig;

/// Creates `<out>/<name>`, where the name defaults to a UTC timestamp and
/// the command. An existing directory is never reused.
pub fn create_run_dir(out: &Path, command: &str, run_name: Option<&str>) -> Result<PathBuf> {
    let name = match run_name {
        Some(n) => n.to_string(),
        None => format!("{}-{command}", chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ")),
    };
    let dir = out.join(name);
    if dir.exists() {
        bail!("run directory {} already exists", dir.display());
    }
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

/// Command-line values that replace config entries when given.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seeds: Option<Vec<u64>>,
    pub k: Option<Vec<usize>>,
    pub m: Option<usize>,
    pub delta: Option<f64>,
    pub epsilon: Option<Vec<f64>>,
    pub models: Option<Vec<ModelKind>>,
    pub sites: Option<usize>,
    pub rounds: Option<usize>,
    pub records: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(v) = &self.seeds {
            cfg.seeds = v.clone();
        }
        if let Some(v) = &self.k {
            cfg.anonymization.k = v.clone();
        }
        if let Some(v) = self.m {
            cfg.anonymization.m = v;
        }
        if let Some(v) = self.delta {
            cfg.anonymization.delta = v;
        }
        if let Some(v) = &self.epsilon {
            cfg.dp.epsilon = v.clone();
        }
        if let Some(v) = &self.models {
            cfg.models = v.clone();
        }
        if let Some(v) = self.sites {
            cfg.fl.num_sites = v;
        }
        if let Some(v) = self.rounds {
            cfg.fl.rounds = v;
        }
        if let Some(v) = &self.out_dir {
            cfg.out_dir = v.clone();
        }
        match (&self.schema, &self.dataset) {
            (Some(s), Some(d)) => {
                cfg.data.schema = Some(s.clone());
                cfg.data.dataset = Some(d.clone());
                cfg.data.synth = None;
            }
            (None, None) => {}
            _ => bail!("--schema and --data must be given together"),
        }
        if let Some(n) = self.records {
            match &mut cfg.data.synth {
                Some(s) => s.records = n,
                None => bail!("--records applies only to generated data"),
            }
        }
        cfg.validate()
    }
}

/// Exit code for a failed command: 2 when the verifier ran out of budget,
/// 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    let budget = err
        .chain()
        .any(|e| matches!(e.downcast_ref::<synfl::Error>(), Some(synfl::Error::BudgetExceeded { .. })));
    if budget {
        2
    } else {
        1
    }
}
