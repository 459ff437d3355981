//! Predictive distributions over the visibility categories.

mod mlp;
mod optim;
mod pmf;
mod polr;

use serde::{Deserialize, Serialize};

pub use mlp::{mlp_fit, mlp_predict, Activation, DenseLayer, MlpArchitecture, MlpModel};
pub use optim::{minimize_lbfgs, LbfgsOptions, Minimum};
pub use pmf::{climatology_pmf, pmf_floor, Pmf, DEFAULT_P_MIN};
pub use polr::{polr_fit, polr_fit_warm, polr_predict, PolrModel};

use crate::{Error, Result};

/// Optimizer settings shared by both classifiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    /// Iterations (POLR) or epochs (MLP).
    pub max_iter: usize,
    /// Relative objective change treated as converged.
    pub tolerance: f64,
    pub learning_rate: f64,
    /// Step size at epoch `e` is `learning_rate / (1 + lr_decay * e)`.
    pub lr_decay: f64,
    pub batch_size: usize,
    pub validation_fraction: f64,
    pub patience: usize,
    pub seed: u64,
}

impl TrainOptions {
    pub fn polr() -> Self {
        Self {
            max_iter: 1000,
            tolerance: 1e-10,
            learning_rate: 0.0,
            lr_decay: 0.0,
            batch_size: 0,
            validation_fraction: 0.0,
            patience: 0,
            seed: 0,
        }
    }

    pub fn mlp() -> Self {
        Self {
            max_iter: 200,
            tolerance: 1e-9,
            learning_rate: 0.01,
            lr_decay: 0.01,
            batch_size: 32,
            validation_fraction: 0.1,
            patience: 20,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::invalid("tolerance must be positive"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::invalid("validation fraction must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Convergence record stored with every fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitStatus {
    pub converged: bool,
    pub iterations: usize,
    /// Final mean negative log-likelihood on the training data.
    pub objective: f64,
    pub n_samples: usize,
}

/// Self-describing serialized model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelArtifact {
    Polr(PolrModel),
    Mlp(MlpModel),
}

impl ModelArtifact {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn predict(&self, x: &[f64]) -> Result<Pmf> {
        match self {
            ModelArtifact::Polr(m) => polr_predict(m, x),
            ModelArtifact::Mlp(m) => mlp_predict(m, x),
        }
    }
}

fn check_training_data(x: &[Vec<f64>], labels: &[usize], n_categories: usize) -> Result<usize> {
    if x.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} feature rows but {} labels",
            x.len(),
            labels.len()
        )));
    }
    let Some(first) = x.first() else {
        return Err(Error::UnfitModel("no training samples".into()));
    };
    let dim = first.len();
    for (row, &y) in x.iter().zip(labels) {
        if row.len() != dim {
            return Err(Error::invalid("feature rows differ in length"));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite feature value"));
        }
        if y >= n_categories {
            return Err(Error::invalid(format!("label {y} outside 0..{n_categories}")));
        }
    }
    if labels.iter().all(|&y| y == labels[0]) {
        return Err(Error::UnfitModel(format!(
            "all {} training labels are category {}",
            labels.len(),
            labels[0]
        )));
    }
    Ok(dim)
}
