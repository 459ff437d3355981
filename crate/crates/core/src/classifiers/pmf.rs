use serde::{Deserialize, Serialize};

use crate::domain::{VisibilityScale, N_CATEGORIES};
use crate::{Error, Result};

/// Probability floor applied before the logarithmic score.
pub const DEFAULT_P_MIN: f64 = 2.75e-5;

/// Probabilities of the visibility categories; nonnegative, summing to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pmf(Vec<f64>);

impl Pmf {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("empty PMF"));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::invalid("PMF entries must be finite and nonnegative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("PMF sums to {total}")));
        }
        Ok(Self(probs))
    }

    /// Normalizes nonnegative weights.
    pub fn from_weights(mut weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Numeric(format!("cannot normalize weights summing to {total}")));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Self::new(weights)
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn point_mass(n: usize, k: usize) -> Self {
        let mut p = vec![0.0; n];
        p[k] = 1.0;
        Self(p)
    }

    /// Empirical distribution of ensemble members rounded down onto the scale.
    pub fn from_members(members: impl IntoIterator<Item = f64>, scale: &VisibilityScale) -> Result<Self> {
        let mut counts = vec![0.0; scale.len()];
        for v in members {
            counts[scale.discretize(v)?] += 1.0;
        }
        Self::from_weights(counts)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn prob(&self, k: usize) -> f64 {
        self.0[k]
    }

    pub fn cdf(&self) -> Vec<f64> {
        self.0
            .iter()
            .scan(0.0, |acc, p| {
                *acc += p;
                Some(*acc)
            })
            .collect()
    }
}

/// Raises every entry below `p_min` to `p_min`, then renormalizes.
pub fn pmf_floor(pmf: &Pmf, p_min: f64) -> Pmf {
    if pmf.0.iter().all(|&p| p >= p_min) {
        return pmf.clone();
    }
    let raised: Vec<f64> = pmf.0.iter().map(|&p| p.max(p_min)).collect();
    let total: f64 = raised.iter().sum();
    Pmf(raised.into_iter().map(|p| p / total).collect())
}

/// Relative frequencies of observed categories.
pub fn climatology_pmf(observations: &[usize]) -> Result<Pmf> {
    if observations.is_empty() {
        return Err(Error::InsufficientData("empty climatology window".into()));
    }
    let mut counts = vec![0.0; N_CATEGORIES];
    for &k in observations {
        if k >= N_CATEGORIES {
            return Err(Error::invalid(format!("category {k} out of range")));
        }
        counts[k] += 1.0;
    }
    Pmf::from_weights(counts)
}
