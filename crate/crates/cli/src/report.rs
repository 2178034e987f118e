//! CSV reports, config echo and run manifests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

use crate::pipeline::CellResult;

/// Config text as `#` comment lines, for the top of every CSV.
pub fn echo(config_toml: &str) -> String {
    let mut s = String::new();
    for line in config_toml.lines() {
        s.push_str("# ");
        s.push_str(line);
        s.push('\n');
    }
    s
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:.6}"))
}

/// Keeps the status field a single CSV cell.
fn clean(s: &str) -> String {
    s.replace([',', '\n', '\r'], ";")
}

/// One row per (seed, model, mode) cell.
pub fn summary_csv(config_toml: &str, rows: &[CellResult]) -> String {
    let mut s = echo(config_toml);
    s.push_str("seed,model,mode,param,f1,unmapped_rate,u_r,u_t,status\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.seed,
            r.model,
            r.mode,
            r.param,
            opt(r.f1),
            opt(r.unmapped_rate),
            opt(r.u_r),
            opt(r.u_t),
            clean(&r.status)
        );
    }
    s
}

/// Mean and sample standard deviation of F1 for one (model, mode, param).
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub model: String,
    pub mode: String,
    pub param: String,
    pub n: usize,
    pub failed: usize,
    pub mean_f1: f64,
    pub std_f1: f64,
}

/// Groups cells over seeds, keeping the order in which groups first appear.
pub fn aggregate(rows: &[CellResult]) -> Vec<Aggregate> {
    let mut order: Vec<(String, String, String)> = Vec::new();
    let mut groups: BTreeMap<(String, String, String), (Vec<f64>, usize)> = BTreeMap::new();
    for r in rows {
        let key = (r.model.to_string(), r.mode.to_string(), r.param.clone());
        let e = groups.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            (Vec::new(), 0)
        });
        match r.f1 {
            Some(f) => e.0.push(f),
            None => e.1 += 1,
        }
    }
    order
        .into_iter()
        .map(|key| {
            let (vals, failed) = &groups[&key];
            let n = vals.len();
            let mean = if n > 0 { vals.iter().sum::<f64>() / n as f64 } else { f64::NAN };
            let std = if n > 1 {
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            Aggregate {
                model: key.0,
                mode: key.1,
                param: key.2,
                n,
                failed: *failed,
                mean_f1: mean,
                std_f1: std,
            }
        })
        .collect()
}

pub fn aggregate_csv(config_toml: &str, groups: &[Aggregate]) -> String {
    let mut s = echo(config_toml);
    s.push_str("model,mode,param,n,failed,mean_f1,std_f1\n");
    for g in groups {
        let mean = if g.n > 0 { format!("{:.6}", g.mean_f1) } else { String::new() };
        let _ = writeln!(s, "{},{},{},{},{},{},{:.6}", g.model, g.mode, g.param, g.n, g.failed, mean, g.std_f1);
    }
    s
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `manifest.txt` listing every file under `dir` (recursively) with
/// its sha256. The listing is sorted and carries no timestamps.
pub fn write_manifest(dir: &Path, command: &str, config_toml: &str) -> Result<()> {
    let mut files = Vec::new();
    collect(dir, dir, &mut files)?;
    files.sort();
    let mut s = String::from("# synfl run manifest\n");
    let _ = writeln!(s, "command\t{command}");
    let _ = writeln!(s, "config\t{}", sha256_hex(config_toml.as_bytes()));
    for rel in files {
        if rel == "manifest.txt" {
            continue;
        }
        let bytes = std::fs::read(dir.join(&rel)).with_context(|| format!("reading {rel}"))?;
        let _ = writeln!(s, "file\t{}\t{}", sha256_hex(&bytes), rel);
    }
    let p = dir.join("manifest.txt");
    std::fs::write(&p, s).with_context(|| format!("writing {}", p.display()))
}

fn collect(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            collect(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).expect("under root");
            out.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}
