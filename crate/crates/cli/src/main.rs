use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use synfl::flsim::ModelKind;
use synfl::verifier::DEFAULT_BUDGET;
use synfl_cli::commands::{self, TrainArgs, TrainMode};
use synfl_cli::config::ExperimentConfig;
use synfl_cli::report::write_manifest;
use synfl_cli::run::{create_run_dir, exit_code, Overrides};

/// (k,k^m)-anonymization and federated learning experiments.
#[derive(Parser)]
#[command(name = "synfl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunOpts {
    /// Parent directory for the run directory (overrides out_dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run directory name instead of a timestamp.
    #[arg(long, global = true)]
    run_name: Option<String>,
}

#[derive(Args)]
struct ConfigOpts {
    /// Experiment config file (TOML); defaults apply when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    epsilon: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<ModelKind>>,
    /// Number of sites.
    #[arg(long)]
    sites: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    /// Records to generate.
    #[arg(long)]
    records: Option<usize>,
    /// Schema file of a dataset on disk (with --data).
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with its schema and hierarchies.
    Synth {
        #[command(flatten)]
        cfg: ConfigOpts,
        #[command(flatten)]
        run: RunOpts,
    },
    /// Partition, anonymize and verify every site; share the mappings.
    Anonymize {
        #[command(flatten)]
        cfg: ConfigOpts,
        #[command(flatten)]
        run: RunOpts,
    },
    /// Check a generalized table for (k,k^m)-anonymity.
    Verify {
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: u64,
        #[command(flatten)]
        run: RunOpts,
    },
    /// Train one model in one mode.
    Train {
        /// central, federated, federated-dp or federated-syntactic.
        #[arg(long)]
        mode: TrainMode,
        /// Model kind; defaults to the first configured model.
        #[arg(long)]
        model: Option<ModelKind>,
        /// Output directory of an anonymize run (federated-syntactic).
        #[arg(long)]
        input: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigOpts,
        #[command(flatten)]
        run: RunOpts,
    },
    /// Predict labels for raw samples with a trained model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        mappings: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        samples: PathBuf,
        #[command(flatten)]
        run: RunOpts,
    },
    /// Run every mode over the seed, k and epsilon grids.
    Compare {
        #[command(flatten)]
        cfg: ConfigOpts,
        #[command(flatten)]
        run: RunOpts,
    },
}

impl ConfigOpts {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        Overrides {
            seeds: self.seeds.clone(),
            k: self.k.clone(),
            m: self.m,
            delta: self.delta,
            epsilon: self.epsilon.clone(),
            models: self.models.clone(),
            sites: self.sites,
            rounds: self.rounds,
            records: self.records,
            out_dir: None,
            schema: self.schema.clone(),
            dataset: self.data.clone(),
        }
        .apply(&mut cfg)?;
        Ok(cfg)
    }
}

fn run_dir(run: &RunOpts, default_out: &Path, command: &str) -> Result<PathBuf> {
    let out = run.out.as_deref().unwrap_or(default_out);
    create_run_dir(out, command, run.run_name.as_deref())
}

fn finish(dir: &Path, command: &str, config: &str, code: u8) -> Result<u8> {
    write_manifest(dir, command, config)?;
    eprintln!("run directory: {}", dir.display());
    Ok(code)
}

fn dispatch(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Synth { cfg, run } => {
            let cfg = cfg.load()?;
            let dir = run_dir(&run, &cfg.out_dir, "synth")?;
            let code = commands::cmd_synth(&cfg, cfg.seeds[0], &dir)?;
            finish(&dir, "synth", &cfg.to_toml(), code)
        }
        Command::Anonymize { cfg, run } => {
            let cfg = cfg.load()?;
            let dir = run_dir(&run, &cfg.out_dir, "anonymize")?;
            let code = commands::cmd_anonymize(&cfg, cfg.seeds[0], &dir)?;
            finish(&dir, "anonymize", &cfg.to_toml(), code)
        }
        Command::Verify {
            schema,
            data,
            k,
            m,
            budget,
            run,
        } => {
            let dir = run_dir(&run, Path::new("runs"), "verify")?;
            let code = commands::cmd_verify(&schema, &data, k, m, budget, &dir)?;
            let echo = format!("k = {k}\nm = {m}\nbudget = {budget}\n");
            finish(&dir, "verify", &echo, code)
        }
        Command::Train {
            mode,
            model,
            input,
            cfg,
            run,
        } => {
            let cfg = cfg.load()?;
            let dir = run_dir(&run, &cfg.out_dir, "train")?;
            let args = TrainArgs {
                mode,
                model: model.unwrap_or(cfg.models[0]),
                seed: cfg.seeds[0],
                input,
            };
            let code = commands::cmd_train(&cfg, &args, &dir)?;
            finish(&dir, "train", &cfg.to_toml(), code)
        }
        Command::Predict {
            model,
            mappings,
            schema,
            samples,
            run,
        } => {
            let dir = run_dir(&run, Path::new("runs"), "predict")?;
            let code = commands::cmd_predict(&model, &mappings, &schema, &samples, &dir)?;
            finish(&dir, "predict", "", code)
        }
        Command::Compare { cfg, run } => {
            let cfg = cfg.load()?;
            let dir = run_dir(&run, &cfg.out_dir, "compare")?;
            let code = commands::cmd_compare(&cfg, &dir)?;
            finish(&dir, "compare", &cfg.to_toml(), code)
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
