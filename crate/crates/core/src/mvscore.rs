//! Multivariate verification: energy and variogram scores, pre-rank
//! histograms and the stationary block bootstrap.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{haversine_km, Station};
use crate::mvconstruct::SampleMatrix;
use crate::rng::random_ranks;
use crate::uniscore::{mean, RankHistogram};
use crate::{stream, Error, Result};

/// Length scale of the distance weights, km.
const WEIGHT_SCALE_KM: f64 = 100.0;

/// Symmetric nonnegative D x D pair weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightMatrix {
    n: usize,
    values: Vec<f64>,
}

impl WeightMatrix {
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::invalid("weight matrix must be square"));
        }
        for i in 0..n {
            for j in 0..n {
                let w = values[i * n + j];
                if !(w >= 0.0 && w.is_finite()) || w != values[j * n + i] {
                    return Err(Error::invalid(format!("weight ({i}, {j}) = {w} is negative or asymmetric")));
                }
            }
        }
        Ok(Self { n, values })
    }

    /// All pair weights equal to one.
    pub fn unit(n: usize) -> Self {
        Self { n, values: vec![1.0; n * n] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }
}

/// `exp(-distance / 100 km)` between every pair of stations.
pub fn dependence_weights(stations: &[Station]) -> WeightMatrix {
    let n = stations.len();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let w = (-haversine_km(&stations[i], &stations[j]) / WEIGHT_SCALE_KM).exp();
            values[i * n + j] = w;
            values[j * n + i] = w;
        }
    }
    WeightMatrix { n, values }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn check_obs(sample: &SampleMatrix, obs: &[f64]) -> Result<()> {
    if obs.len() != sample.n_dims() {
        return Err(Error::invalid(format!(
            "observation has {} dimensions, sample has {}",
            obs.len(),
            sample.n_dims()
        )));
    }
    Ok(())
}

/// Ensemble energy score `mean ||x_j - y|| - mean ||x_j - x_k|| / 2`.
pub fn energy_score(sample: &SampleMatrix, obs: &[f64]) -> Result<f64> {
    check_obs(sample, obs)?;
    let k = sample.n_members();
    let first: f64 = sample.rows().map(|r| euclid(r, obs)).sum::<f64>() / k as f64;
    let mut spread = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            spread += euclid(sample.row(i), sample.row(j));
        }
    }
    Ok(first - spread / (k * k) as f64)
}

/// Variogram score of order `p` with pair weights.
pub fn variogram_score(sample: &SampleMatrix, obs: &[f64], weights: &WeightMatrix, p: f64) -> Result<f64> {
    check_obs(sample, obs)?;
    if weights.dim() != obs.len() {
        return Err(Error::invalid("weight matrix does not match the dimension"));
    }
    if !(p > 0.0) {
        return Err(Error::invalid("variogram order must be positive"));
    }
    let d = obs.len();
    let k = sample.n_members() as f64;
    let mut total = 0.0;
    for i in 0..d {
        for j in i + 1..d {
            let fc: f64 = sample.rows().map(|r| (r[i] - r[j]).abs().powf(p)).sum::<f64>() / k;
            let diff = (obs[i] - obs[j]).abs().powf(p) - fc;
            total += (weights.get(i, j) + weights.get(j, i)) * diff * diff;
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PreRankKind {
    Average,
    BandDepth,
    EnergyScore,
    Dependence,
}

impl PreRankKind {
    pub const ALL: [PreRankKind; 4] = [
        PreRankKind::Average,
        PreRankKind::BandDepth,
        PreRankKind::EnergyScore,
        PreRankKind::Dependence,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PreRankKind::Average => "average",
            PreRankKind::BandDepth => "band_depth",
            PreRankKind::EnergyScore => "energy_score",
            PreRankKind::Dependence => "dependence",
        }
    }
}

/// Pre-rank function values of the pool; index 0 is the observation.
/// Larger values mean more outlying.
fn pre_rank_values<R: Rng + ?Sized>(
    kind: PreRankKind,
    pool: &[&[f64]],
    weights: Option<&WeightMatrix>,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let m = pool.len();
    let d = pool[0].len();
    let k = (m - 1) as f64;
    let coordinate_ranks = |rng: &mut R| -> Vec<Vec<usize>> {
        (0..d)
            .map(|j| random_ranks(&pool.iter().map(|v| v[j]).collect::<Vec<_>>(), rng))
            .collect()
    };
    Ok(match kind {
        PreRankKind::Average => {
            let ranks = coordinate_ranks(rng);
            (0..m).map(|v| ranks.iter().map(|r| r[v] as f64).sum::<f64>() / d as f64).collect()
        }
        PreRankKind::BandDepth => {
            let ranks = coordinate_ranks(rng);
            let n = m as f64;
            (0..m)
                .map(|v| {
                    let depth: f64 = ranks.iter().map(|r| (n - r[v] as f64) * (r[v] as f64 - 1.0)).sum();
                    -depth
                })
                .collect()
        }
        PreRankKind::EnergyScore => {
            let mut dist = vec![0.0; m * m];
            for a in 0..m {
                for b in a + 1..m {
                    let e = euclid(pool[a], pool[b]);
                    dist[a * m + b] = e;
                    dist[b * m + a] = e;
                }
            }
            let row: Vec<f64> = dist.chunks_exact(m).map(|r| r.iter().sum()).collect();
            let total: f64 = row.iter().sum();
            (0..m).map(|v| row[v] / k - (total - 2.0 * row[v]) / (2.0 * k * k)).collect()
        }
        PreRankKind::Dependence => {
            let w = weights.ok_or_else(|| Error::invalid("dependence pre-rank requires a weight matrix"))?;
            if w.dim() != d {
                return Err(Error::invalid("weight matrix does not match the dimension"));
            }
            let pairs: Vec<(usize, usize)> = (0..d).flat_map(|i| (i + 1..d).map(move |j| (i, j))).collect();
            let gamma: Vec<Vec<f64>> = pool
                .iter()
                .map(|v| pairs.iter().map(|&(i, j)| (v[i] - v[j]).abs().sqrt()).collect())
                .collect();
            let sums: Vec<f64> = (0..pairs.len()).map(|p| gamma.iter().map(|g| g[p]).sum()).collect();
            (0..m)
                .map(|v| {
                    pairs
                        .iter()
                        .enumerate()
                        .map(|(p, &(i, j))| {
                            let diff = gamma[v][p] - (sums[p] - gamma[v][p]) / k;
                            (w.get(i, j) + w.get(j, i)) * diff * diff
                        })
                        .sum()
                })
                .collect()
        }
    })
}

/// Rank in 1..=K+1 of the observation's pre-rank value within the pool of
/// the observation and the K members; ties broken at random.
pub fn pre_rank<R: Rng + ?Sized>(
    kind: PreRankKind,
    sample: &SampleMatrix,
    obs: &[f64],
    weights: Option<&WeightMatrix>,
    rng: &mut R,
) -> Result<usize> {
    check_obs(sample, obs)?;
    let mut pool: Vec<&[f64]> = Vec::with_capacity(sample.n_members() + 1);
    pool.push(obs);
    pool.extend(sample.rows());
    let values = pre_rank_values(kind, &pool, weights, rng)?;
    Ok(random_ranks(&values, rng)[0])
}

pub fn histogram<R: Rng + ?Sized>(
    kind: PreRankKind,
    cases: &[(SampleMatrix, Vec<f64>)],
    weights: Option<&WeightMatrix>,
    rng: &mut R,
) -> Result<RankHistogram> {
    let Some((first, _)) = cases.first() else {
        return Err(Error::InsufficientData("no cases for the rank histogram".into()));
    };
    let k = first.n_members();
    let mut hist = RankHistogram::new(k);
    for (sample, obs) in cases {
        if sample.n_members() != k {
            return Err(Error::invalid(format!(
                "mixed ensemble sizes {k} and {} in one histogram",
                sample.n_members()
            )));
        }
        hist.add(pre_rank(kind, sample, obs, weights, rng)?)?;
    }
    Ok(hist)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub replicates: usize,
    /// Mean block length; `None` uses `ceil(n^(1/3))`.
    pub mean_block_length: Option<f64>,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self { replicates: 2000, mean_block_length: None, level: 0.95, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
    pub block_length: f64,
    pub replicates: Vec<f64>,
}

pub fn default_block_length(n: usize) -> f64 {
    (n as f64).cbrt().ceil()
}

/// Resampled positions of one stationary-bootstrap replicate: blocks wrap
/// around the series and end with probability `1 / block_length`.
pub fn stationary_indices<R: Rng + ?Sized>(n: usize, block_length: f64, rng: &mut R) -> Vec<usize> {
    let p_new = 1.0 / block_length;
    let mut idx = Vec::with_capacity(n);
    let mut pos = rng.random_range(0..n);
    idx.push(pos);
    while idx.len() < n {
        pos = if rng.random::<f64>() < p_new { rng.random_range(0..n) } else { (pos + 1) % n };
        idx.push(pos);
    }
    idx
}

/// Linear-interpolation sample quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn run_bootstrap<F>(n: usize, estimate: f64, opts: &BootstrapOptions, statistic: F) -> Result<BootstrapResult>
where
    F: Fn(&[usize]) -> f64 + Sync,
{
    if n < 2 {
        return Err(Error::InsufficientData(format!("bootstrap needs at least 2 values, got {n}")));
    }
    let block_length = opts.mean_block_length.unwrap_or_else(|| default_block_length(n));
    if !(block_length >= 1.0) {
        return Err(Error::invalid("mean block length must be at least 1"));
    }
    if opts.replicates == 0 || !(opts.level > 0.0 && opts.level < 1.0) {
        return Err(Error::invalid("bootstrap needs replicates > 0 and a level in (0, 1)"));
    }
    let replicates: Vec<f64> = (0..opts.replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream!(opts.seed, "bootstrap", b);
            statistic(&stationary_indices(n, block_length, &mut rng))
        })
        .collect();
    if let Some(v) = replicates.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("bootstrap statistic evaluated to {v}")));
    }
    let mut sorted = replicates.clone();
    sorted.sort_by(f64::total_cmp);
    let alpha = (1.0 - opts.level) / 2.0;
    Ok(BootstrapResult {
        estimate,
        lo: quantile_sorted(&sorted, alpha),
        hi: quantile_sorted(&sorted, 1.0 - alpha),
        block_length,
        replicates,
    })
}

/// Percentile interval for the mean of a time-ordered series.
pub fn stationary_bootstrap_ci(series: &[f64], opts: &BootstrapOptions) -> Result<BootstrapResult> {
    let estimate = if series.is_empty() { f64::NAN } else { mean(series) };
    run_bootstrap(series.len(), estimate, opts, |idx| {
        let v: Vec<f64> = idx.iter().map(|&i| series[i]).collect();
        mean(&v)
    })
}

/// Percentile interval for `1 - mean(forecast) / mean(reference)`, both
/// series resampled with the same blocks.
pub fn stationary_bootstrap_skill_ci(forecast: &[f64], reference: &[f64], opts: &BootstrapOptions) -> Result<BootstrapResult> {
    if forecast.len() != reference.len() {
        return Err(Error::invalid("paired score series differ in length"));
    }
    let skill = |f: f64, r: f64| 1.0 - f / r;
    let estimate = if forecast.is_empty() { f64::NAN } else { skill(mean(forecast), mean(reference)) };
    run_bootstrap(forecast.len(), estimate, opts, |idx| {
        let f: Vec<f64> = idx.iter().map(|&i| forecast[i]).collect();
        let r: Vec<f64> = idx.iter().map(|&i| reference[i]).collect();
        skill(mean(&f), mean(&r))
    })
}
