//! Experiment configuration: one TOML document, every key overridable
//! with `--set key=value`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use viscal_core::classifiers::Activation;
use viscal_core::mvconstruct::QuantileLevels;
use viscal_core::training::TrainingScheme;
use viscal_core::{BootstrapOptions, MlpArchitecture, SynthConfig, TrainOptions, DEFAULT_P_MIN};

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Polr,
    Mlp,
}

/// A trained univariate model such as `POLR-L` or `MLP-C+aux`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelSpec {
    pub method: Method,
    pub scheme: TrainingScheme,
    pub aux: bool,
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let method = match self.method {
            Method::Polr => "POLR",
            Method::Mlp => "MLP",
        };
        write!(f, "{method}-{}{}", self.scheme.code(), if self.aux { "+aux" } else { "" })
    }
}

impl ModelSpec {
    pub fn parse(s: &str, clusters: usize) -> anyhow::Result<Self> {
        let (body, aux) = match s.strip_suffix("+aux") {
            Some(b) => (b, true),
            None => (s, false),
        };
        let (method, scheme) = body
            .split_once('-')
            .ok_or_else(|| config_err(format!("model `{s}` is not of the form METHOD-SCHEME[+aux]")))?;
        let method = match method {
            "POLR" => Method::Polr,
            "MLP" => Method::Mlp,
            other => return Err(config_err(format!("unknown method `{other}` in `{s}`"))),
        };
        let scheme = match scheme {
            "L" => TrainingScheme::Local,
            "R" => TrainingScheme::Regional,
            "C" => TrainingScheme::SemiLocal { k: clusters },
            other => return Err(config_err(format!("unknown training scheme `{other}` in `{s}`"))),
        };
        Ok(Self { method, scheme, aux })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MvMethod {
    #[serde(rename = "naive")]
    Naive,
    #[serde(rename = "ECC")]
    Ecc,
    #[serde(rename = "SSh")]
    Ssh,
    #[serde(rename = "mvclim")]
    MvClim,
}

impl MvMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            MvMethod::Naive => "naive",
            MvMethod::Ecc => "ECC",
            MvMethod::Ssh => "SSh",
            MvMethod::MvClim => "mvclim",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VsWeights {
    Unit,
    Distance,
}

/// CSV inputs when `csv_dir` is set, otherwise synthetic data.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub csv_dir: Option<PathBuf>,
    pub synth: SynthConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolrSettings {
    pub max_iter: usize,
    pub tolerance: f64,
}

impl Default for PolrSettings {
    fn default() -> Self {
        let o = TrainOptions::polr();
        Self { max_iter: o.max_iter, tolerance: o.tolerance }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpSettings {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub tolerance: f64,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub batch_size: usize,
    pub validation_fraction: f64,
    pub patience: usize,
}

impl Default for MlpSettings {
    fn default() -> Self {
        let o = TrainOptions::mlp();
        let a = MlpArchitecture::default();
        Self {
            hidden: a.hidden,
            activation: a.activation,
            epochs: o.max_iter,
            tolerance: o.tolerance,
            learning_rate: o.learning_rate,
            lr_decay: o.lr_decay,
            batch_size: o.batch_size,
            validation_fraction: o.validation_fraction,
            patience: o.patience,
        }
    }
}

impl MlpSettings {
    pub fn architecture(&self) -> MlpArchitecture {
        MlpArchitecture { hidden: self.hidden.clone(), activation: self.activation }
    }

    pub fn options(&self, seed: u64) -> TrainOptions {
        TrainOptions {
            max_iter: self.epochs,
            tolerance: self.tolerance,
            learning_rate: self.learning_rate,
            lr_decay: self.lr_decay,
            batch_size: self.batch_size,
            validation_fraction: self.validation_fraction,
            patience: self.patience,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapSettings {
    pub replicates: usize,
    pub mean_block_length: Option<f64>,
    pub level: f64,
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        let o = BootstrapOptions::default();
        Self { replicates: o.replicates, mean_block_length: o.mean_block_length, level: o.level }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    /// Trained models, e.g. `POLR-L`, `MLP-C+aux`.
    pub schemes: Vec<String>,
    pub clusters: usize,
    pub window_days: u32,
    pub climatology_days: u32,
    /// Refit trained models every this many forecast dates.
    pub refit_every_days: u32,
    /// Members of the multivariate forecasts; must equal the raw ensemble size.
    pub ensemble_members: usize,
    /// Univariate models turned into multivariate forecasts.
    pub mv_models: Vec<String>,
    pub mv_methods: Vec<MvMethod>,
    pub quantile_levels: QuantileLevels,
    pub vs_weights: VsWeights,
    /// Models whose scores serve as skill-score references.
    pub references: Vec<String>,
    pub verify_from: Option<NaiveDate>,
    /// Last verification date, inclusive.
    pub verify_to: Option<NaiveDate>,
    pub p_min: f64,
    /// Write the per-case PMF and multivariate sample dumps.
    pub write_dumps: bool,
    pub bootstrap: BootstrapSettings,
    pub polr: PolrSettings,
    pub mlp: MlpSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 20210101,
            output_dir: PathBuf::from("viscal-out"),
            data: DataConfig::default(),
            schemes: vec!["POLR-L".into(), "POLR-L+aux".into(), "MLP-C".into()],
            clusters: 4,
            window_days: 350,
            climatology_days: 30,
            refit_every_days: 1,
            ensemble_members: 51,
            mv_models: vec!["POLR-L".into()],
            mv_methods: vec![MvMethod::Naive, MvMethod::Ecc, MvMethod::Ssh, MvMethod::MvClim],
            quantile_levels: QuantileLevels::Midpoint,
            vs_weights: VsWeights::Unit,
            references: vec!["raw".into(), "clim".into()],
            verify_from: None,
            verify_to: None,
            p_min: DEFAULT_P_MIN,
            write_dumps: true,
            bootstrap: BootstrapSettings::default(),
            polr: PolrSettings::default(),
            mlp: MlpSettings::default(),
        }
    }
}

/// Parses a `--set` value as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> anyhow::Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|p| !p.is_empty()).ok_or_else(|| config_err(format!("empty key in `{key}`")))?;
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| config_err(format!("`{p}` in `{key}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl ExperimentConfig {
    /// Reads an optional TOML file and applies `key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> anyhow::Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| config_err(format!("cannot read config {}: {e}", p.display())))?;
                toml::from_str::<toml::Table>(&text)
                    .map_err(|e| config_err(format!("invalid config {}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| config_err(format!("override `{o}` is not key=value")))?;
            set_path(&mut table, k.trim(), parse_value(v.trim()))?;
        }
        Self::from_table(table)
    }

    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        let table = toml::from_str::<toml::Table>(text).map_err(|e| config_err(format!("invalid config: {e}")))?;
        Self::from_table(table)
    }

    fn from_table(table: toml::Table) -> anyhow::Result<Self> {
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e| config_err(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn model_specs(&self) -> anyhow::Result<Vec<ModelSpec>> {
        self.schemes.iter().map(|s| ModelSpec::parse(s, self.clusters)).collect()
    }

    pub fn bootstrap_options(&self, seed: u64) -> BootstrapOptions {
        BootstrapOptions {
            replicates: self.bootstrap.replicates,
            mean_block_length: self.bootstrap.mean_block_length,
            level: self.bootstrap.level,
            seed,
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.schemes.is_empty() {
            return Err(config_err("no schemes configured"));
        }
        let specs = self.model_specs()?;
        for (i, s) in specs.iter().enumerate() {
            if specs[..i].contains(s) {
                return Err(config_err(format!("scheme {s} listed twice")));
            }
        }
        if self.clusters == 0 {
            return Err(config_err("clusters must be at least 1"));
        }
        if self.window_days == 0 || self.climatology_days == 0 || self.refit_every_days == 0 {
            return Err(config_err("window lengths and refit interval must be positive"));
        }
        let names: Vec<String> = specs.iter().map(ToString::to_string).collect();
        for m in &self.mv_models {
            if !names.contains(m) {
                return Err(config_err(format!("mv model {m} is not among the schemes")));
            }
        }
        for r in &self.references {
            if !(r == "raw" || r == "clim" || r == "mvclim" || names.contains(r)) {
                return Err(config_err(format!("unknown reference {r}")));
            }
        }
        if !(self.p_min > 0.0 && self.p_min < 1.0 / 84.0) {
            return Err(config_err(format!("p_min {} outside (0, 1/84)", self.p_min)));
        }
        if let (Some(a), Some(b)) = (self.verify_from, self.verify_to) {
            if a > b {
                return Err(config_err("verify_from is after verify_to"));
            }
        }
        if self.bootstrap.replicates == 0 || !(self.bootstrap.level > 0.0 && self.bootstrap.level < 1.0) {
            return Err(config_err("bootstrap needs replicates > 0 and a level in (0, 1)"));
        }
        if self.mlp.hidden.contains(&0) {
            return Err(config_err("MLP hidden layers must be nonempty"));
        }
        if self.data.csv_dir.is_none() {
            let synth = &self.data.synth;
            synth.validate().map_err(|e| config_err(format!("synthetic data: {e}")))?;
            if synth.ensemble_size != self.ensemble_members {
                return Err(config_err(format!(
                    "ensemble_members {} differs from the synthetic ensemble size {}",
                    self.ensemble_members, synth.ensemble_size
                )));
            }
        }
        Ok(())
    }
}

impl FromStr for ExperimentConfig {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::from_toml(s)
    }
}
