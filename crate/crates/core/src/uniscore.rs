//! Univariate verification of category PMFs and ensembles.

use chrono::NaiveDate;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::classifiers::{pmf_floor, Pmf};
use crate::domain::VisibilityScale;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ScoreKind {
    #[serde(rename = "CRPS")]
    Crps,
    #[serde(rename = "LogS")]
    Logs,
    #[serde(rename = "ES")]
    Es,
    #[serde(rename = "VS")]
    Vs,
}

impl ScoreKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreKind::Crps => "CRPS",
            ScoreKind::Logs => "LogS",
            ScoreKind::Es => "ES",
            ScoreKind::Vs => "VS",
        }
    }
}

impl std::fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Sum by recursive halving; the grouping depends only on the length.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 8 {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

pub fn mean(values: &[f64]) -> f64 {
    pairwise_sum(values) / values.len() as f64
}

/// Time-ordered per-date mean scores, the input of the block bootstrap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSeries {
    pub kind: ScoreKind,
    pub dates: Vec<NaiveDate>,
    pub values: Vec<f64>,
}

impl ScoreSeries {
    pub fn new(kind: ScoreKind, dates: Vec<NaiveDate>, values: Vec<f64>) -> Result<Self> {
        if dates.len() != values.len() {
            return Err(Error::invalid("score series dates and values differ in length"));
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("score series dates must be strictly increasing"));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite {kind} value {v} in score series")));
        }
        Ok(Self { kind, dates, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        mean(&self.values)
    }
}

/// Counts of ranks 1..=K+1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankHistogram {
    pub counts: Vec<u64>,
    pub total: u64,
}

impl RankHistogram {
    pub fn new(ensemble_size: usize) -> Self {
        Self { counts: vec![0; ensemble_size + 1], total: 0 }
    }

    pub fn from_ranks(ensemble_size: usize, ranks: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut h = Self::new(ensemble_size);
        for r in ranks {
            h.add(r)?;
        }
        Ok(h)
    }

    /// Records a 1-based rank.
    pub fn add(&mut self, rank: usize) -> Result<()> {
        if rank == 0 || rank > self.counts.len() {
            return Err(Error::invalid(format!("rank {rank} outside 1..={}", self.counts.len())));
        }
        self.counts[rank - 1] += 1;
        self.total += 1;
        Ok(())
    }

    pub fn ensemble_size(&self) -> usize {
        self.counts.len() - 1
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64 / self.total as f64).collect()
    }
}

/// CRPS in meters of a PMF over the scale categories.
///
/// Evaluated as the integral of `(F(t) - 1{t >= y})^2` over the steps of
/// the category grid, which equals `E|Y - y| - E|Y - Y'| / 2`.
///
/// # Panics
/// If the PMF length or `y` does not match the scale.
pub fn crps_discrete(pmf: &Pmf, y: usize, scale: &VisibilityScale) -> f64 {
    assert_eq!(pmf.len(), scale.len(), "PMF length must match the scale");
    assert!(y < scale.len(), "observation category out of range");
    let mut total = 0.0;
    let mut cdf = 0.0;
    for k in 0..scale.len() - 1 {
        cdf += pmf.prob(k);
        let step = if k >= y { cdf - 1.0 } else { cdf };
        total += step * step * (scale.value(k + 1) - scale.value(k));
    }
    total
}

/// Negative log of the floored probability of the observed category.
pub fn logs(pmf: &Pmf, y: usize, p_min: f64) -> f64 {
    -pmf_floor(pmf, p_min).prob(y).ln()
}

pub fn skill_score(mean_score: f64, mean_ref_score: f64) -> Result<f64> {
    if !(mean_ref_score > 0.0) {
        return Err(Error::invalid(format!("reference score {mean_ref_score} must be positive")));
    }
    Ok(1.0 - mean_score / mean_ref_score)
}

/// Rank of `y` among the pooled ensemble and observation, 1..=K+1, with
/// the position inside a block of ties drawn uniformly.
pub fn verification_rank<R: Rng + ?Sized>(ensemble: &[f64], y: f64, rng: &mut R) -> usize {
    let below = ensemble.iter().filter(|&&v| v < y).count();
    let ties = ensemble.iter().filter(|&&v| v == y).count();
    below + 1 + rng.random_range(0..=ties)
}

/// Sum of absolute deviations of the relative bin frequencies from uniform.
pub fn reliability_index(hist: &RankHistogram) -> Result<f64> {
    if hist.total == 0 {
        return Err(Error::InsufficientData("empty rank histogram".into()));
    }
    let uniform = 1.0 / hist.counts.len() as f64;
    Ok(hist.frequencies().iter().map(|f| (f - uniform).abs()).sum())
}
