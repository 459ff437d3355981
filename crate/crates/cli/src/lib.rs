//! Command-line driver for the visibility calibration experiments.

pub mod config;
pub mod io;
pub mod pipeline;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{ConfigError, ExperimentConfig};
use crate::pipeline::{report, Experiment, ReportRow, Verification};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const WORKERS_ENV: &str = "VISCAL_WORKERS";

/// Process exit code for an error chain: configuration problems, data
/// problems and numerical failures map to distinct codes.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() || cause.is::<clap::Error>() {
            return EXIT_CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<viscal_core::Error>() {
            use viscal_core::Error as E;
            return match e {
                E::Numeric(_) | E::UnfitModel(_) => EXIT_NUMERIC,
                _ => EXIT_DATA,
            };
        }
        if cause.is::<csv::Error>() || cause.is::<std::io::Error>() {
            return EXIT_DATA;
        }
    }
    1
}

/// Runs `f` on a dedicated pool of `workers` threads, or the count from
/// `VISCAL_WORKERS` when `None`.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let workers = match workers {
        Some(n) => n,
        None => match std::env::var(WORKERS_ENV) {
            Ok(v) => v
                .parse()
                .map_err(|_| ConfigError(format!("{WORKERS_ENV} must be a positive integer, got `{v}`")))?,
            Err(_) => 0,
        },
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().context("building thread pool")?;
    Ok(pool.install(f))
}

#[derive(Debug, Serialize)]
struct Manifest {
    tool: &'static str,
    version: &'static str,
    config: toml::Table,
    files: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Writes `manifest.json` with the configuration and the digest of every
/// other file under `dir`.
pub fn write_manifest(dir: &Path, config: &ExperimentConfig) -> Result<PathBuf> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).with_context(|| format!("listing {}", d.display()))? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n != "manifest.json") {
                let rel = path.strip_prefix(dir).expect("under dir").to_string_lossy().replace('\\', "/");
                files.insert(rel, sha256_file(&path)?);
            }
        }
    }
    let mut table: toml::Table = toml::from_str(&config.to_toml()?).context("re-reading configuration")?;
    table.remove("output_dir");
    let manifest = Manifest { tool: "viscal", version: env!("CARGO_PKG_VERSION"), config: table, files };
    let path = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest).context("serializing manifest")?;
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

pub struct RunOutput {
    pub verification: Verification,
    pub report: Vec<ReportRow>,
}

/// The whole experiment: predict, construct multivariate samples, verify,
/// report, and write every output under `out`.
pub fn run_experiment(exp: &Experiment, out: &Path) -> Result<RunOutput> {
    let config = &exp.config;
    let ds = &exp.dataset;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let predictions = exp.predict()?;
    let mv = exp.multivariate(&predictions.forecasts)?;
    let verification = exp.verify(&predictions.forecasts, &mv)?;
    let rows = report(config, &verification.series)?;

    if config.write_dumps {
        io::write_pmfs(&out.join(io::PMFS), ds, &predictions.forecasts)?;
        io::write_mv(&out.join(io::MV_DIR), ds, &mv)?;
    }
    if !predictions.clusters.is_empty() {
        io::write_clusters(&out.join(io::CLUSTERS), ds, &predictions.clusters)?;
    }
    write_verification(out, &verification)?;
    io::write_report(&out.join(io::REPORT), &rows)?;
    write_manifest(out, config)?;
    Ok(RunOutput { verification, report: rows })
}

pub fn write_verification(out: &Path, v: &Verification) -> Result<()> {
    io::write_scores(&out.join(io::SCORES), &v.scores)?;
    io::write_series(&out.join(io::SERIES), &v.series)?;
    io::write_histograms(&out.join(io::HISTOGRAMS), &v.histograms)?;
    io::write_ri(&out.join(io::RI), &v.histograms)
}
