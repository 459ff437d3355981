//! Multivariate forecast construction: quantile sampling and rank
//! reordering (ECC, Schaake shuffle), plus the naive and climatological
//! baselines.

use chrono::{Duration, NaiveDate, NaiveTime};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::classifiers::{climatology_pmf, Pmf};
use crate::domain::{Dataset, VisibilityScale};
use crate::rng::random_ranks;
use crate::training::{window_observations, RollingWindow};
use crate::{Error, Result};

/// K x D matrix of meters; rows are members, columns stations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMatrix {
    n_members: usize,
    n_dims: usize,
    values: Vec<f64>,
}

impl SampleMatrix {
    /// `values` is row-major (member by member).
    pub fn new(n_members: usize, n_dims: usize, values: Vec<f64>) -> Result<Self> {
        if n_members == 0 || n_dims == 0 {
            return Err(Error::invalid("sample matrix needs at least one member and one dimension"));
        }
        if values.len() != n_members * n_dims {
            return Err(Error::invalid(format!(
                "{} values do not fill a {n_members} x {n_dims} matrix",
                values.len()
            )));
        }
        Ok(Self { n_members, n_dims, values })
    }

    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let k = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != k) {
            return Err(Error::invalid("columns differ in length"));
        }
        let d = columns.len();
        let mut values = vec![0.0; k * d];
        for (j, col) in columns.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                values[i * d + j] = *v;
            }
        }
        Self::new(k, d, values)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::invalid("rows differ in length"));
        }
        Self::new(rows.len(), d, rows.concat())
    }

    pub fn n_members(&self) -> usize {
        self.n_members
    }

    pub fn n_dims(&self) -> usize {
        self.n_dims
    }

    pub fn get(&self, member: usize, dim: usize) -> f64 {
        self.values[member * self.n_dims + dim]
    }

    pub fn row(&self, member: usize) -> &[f64] {
        &self.values[member * self.n_dims..(member + 1) * self.n_dims]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n_dims)
    }

    pub fn column(&self, dim: usize) -> Vec<f64> {
        self.rows().map(|r| r[dim]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateSource {
    RawEnsemble,
    HistoricalObservations,
}

/// Matrix whose column ranks dictate the member order of the output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependenceTemplate {
    pub source: TemplateSource,
    pub matrix: SampleMatrix,
    /// Dates of the template rows for historical templates.
    pub dates: Vec<NaiveDate>,
}

/// Probability levels of the K equidistant quantiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantileLevels {
    /// `(j - 0.5) / K`
    #[default]
    Midpoint,
    /// `j / (K + 1)`
    Plotting,
}

impl QuantileLevels {
    pub fn level(self, j: usize, k: usize) -> f64 {
        match self {
            QuantileLevels::Midpoint => (j as f64 - 0.5) / k as f64,
            QuantileLevels::Plotting => j as f64 / (k + 1) as f64,
        }
    }
}

/// K generalized quantiles of the PMF at equidistant levels, ascending.
pub fn equidistant_quantiles(pmf: &Pmf, k: usize, scale: &VisibilityScale, levels: QuantileLevels) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::invalid("quantile count must be positive"));
    }
    if pmf.len() != scale.len() {
        return Err(Error::invalid("PMF length must match the scale"));
    }
    let cdf = pmf.cdf();
    let last = cdf.len() - 1;
    Ok((1..=k)
        .map(|j| {
            let tau = levels.level(j, k);
            let idx = cdf.partition_point(|&c| c < tau).min(last);
            scale.value(idx)
        })
        .collect())
}

/// Arranges each ascending sample column in the rank order of the
/// matching template column; ties in the template are broken at random.
pub fn reorder<R: Rng + ?Sized>(sorted_samples: &[Vec<f64>], template: &SampleMatrix, rng: &mut R) -> Result<SampleMatrix> {
    if sorted_samples.len() != template.n_dims() {
        return Err(Error::invalid(format!(
            "{} sample columns but template has {} dimensions",
            sorted_samples.len(),
            template.n_dims()
        )));
    }
    let k = template.n_members();
    let mut columns = Vec::with_capacity(sorted_samples.len());
    for (d, sorted) in sorted_samples.iter().enumerate() {
        if sorted.len() != k {
            return Err(Error::invalid(format!(
                "column {d} has {} samples, template has {k} members",
                sorted.len()
            )));
        }
        if sorted.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::invalid(format!("sample column {d} is not ascending")));
        }
        let ranks = random_ranks(&template.column(d), rng);
        columns.push(ranks.iter().map(|&r| sorted[r - 1]).collect());
    }
    SampleMatrix::from_columns(&columns)
}

/// Ensemble copula coupling: the raw ensemble is the template.
pub fn ecc<R: Rng + ?Sized>(sorted_samples: &[Vec<f64>], raw: &SampleMatrix, rng: &mut R) -> Result<SampleMatrix> {
    reorder(sorted_samples, raw, rng)
}

/// Dates in the window before `forecast_date` with an observation at every
/// listed station at `time_of_day`.
pub fn complete_observation_dates(
    dataset: &Dataset,
    stations: &[usize],
    window: RollingWindow,
    forecast_date: NaiveDate,
    time_of_day: NaiveTime,
) -> Vec<(NaiveDate, Vec<usize>)> {
    let mut out = Vec::new();
    let mut date = window.start(forecast_date);
    while date < forecast_date {
        let t = date.and_time(time_of_day).and_utc();
        let obs: Option<Vec<usize>> = stations.iter().map(|&s| dataset.observation(s, t)).collect();
        if let Some(obs) = obs {
            out.push((date, obs));
        }
        date += Duration::days(1);
    }
    out
}

/// Schaake shuffle: the template holds observations of K distinct past
/// dates, drawn without replacement from the window's complete dates at
/// the forecast's valid time of day.
#[allow(clippy::too_many_arguments)]
pub fn schaake_shuffle<R: Rng + ?Sized>(
    sorted_samples: &[Vec<f64>],
    dataset: &Dataset,
    stations: &[usize],
    window: RollingWindow,
    forecast_date: NaiveDate,
    valid_time_of_day: NaiveTime,
    k: usize,
    rng: &mut R,
) -> Result<(SampleMatrix, DependenceTemplate)> {
    let pool = complete_observation_dates(dataset, stations, window, forecast_date, valid_time_of_day);
    if pool.len() < k {
        return Err(Error::InsufficientData(format!(
            "Schaake shuffle for {forecast_date} needs {k} complete observation dates at {valid_time_of_day}, found {} ({} short)",
            pool.len(),
            k - pool.len()
        )));
    }
    let mut chosen = sample(rng, pool.len(), k).into_vec();
    chosen.sort_unstable();
    let scale = dataset.scale();
    let rows: Vec<Vec<f64>> = chosen.iter().map(|&i| pool[i].1.iter().map(|&c| scale.value(c)).collect()).collect();
    let template = DependenceTemplate {
        source: TemplateSource::HistoricalObservations,
        matrix: SampleMatrix::from_rows(&rows)?,
        dates: chosen.iter().map(|&i| pool[i].0).collect(),
    };
    let out = reorder(sorted_samples, &template.matrix, rng)?;
    Ok((out, template))
}

/// Member k of every station is that station's k-th quantile.
pub fn naive_multivariate(sorted_samples: &[Vec<f64>]) -> Result<SampleMatrix> {
    SampleMatrix::from_columns(sorted_samples)
}

/// Columns of equidistant quantiles of each station's climatology over
/// the window before `forecast_date` at the valid time of day.
#[allow(clippy::too_many_arguments)]
pub fn mv_climatology(
    dataset: &Dataset,
    stations: &[usize],
    forecast_date: NaiveDate,
    valid_time_of_day: NaiveTime,
    window: RollingWindow,
    k: usize,
    levels: QuantileLevels,
) -> Result<SampleMatrix> {
    let columns = stations
        .iter()
        .map(|&s| {
            let obs = window_observations(dataset, s, window, forecast_date, Some(valid_time_of_day));
            let pmf = climatology_pmf(&obs).map_err(|_| {
                Error::InsufficientData(format!(
                    "no climatology observations for station {} before {forecast_date} at {valid_time_of_day}",
                    dataset.stations()[s].id
                ))
            })?;
            equidistant_quantiles(&pmf, k, dataset.scale(), levels)
        })
        .collect::<Result<Vec<_>>>()?;
    SampleMatrix::from_columns(&columns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::build_scale;
    use crate::stream;
    use proptest::prelude::*;

    #[test]
    fn quantile_examples() {
        let scale = build_scale();
        let q = equidistant_quantiles(&Pmf::point_mass(84, 50), 51, &scale, QuantileLevels::Midpoint).unwrap();
        assert!(q.iter().all(|&v| v == 5000.0));
        let mut p = vec![0.0; 84];
        p[0] = 0.5;
        p[1] = 0.5;
        let q = equidistant_quantiles(&Pmf::new(p).unwrap(), 2, &scale, QuantileLevels::Midpoint).unwrap();
        assert_eq!(q, vec![0.0, 100.0]);
        let q = equidistant_quantiles(&Pmf::uniform(84), 84, &scale, QuantileLevels::Midpoint).unwrap();
        let all: Vec<f64> = scale.values().collect();
        assert_eq!(q, all);
        let q = equidistant_quantiles(&Pmf::uniform(84), 83, &scale, QuantileLevels::Plotting).unwrap();
        assert!(q.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn ecc_examples() {
        let mut rng = stream!(1, "ecc");
        let raw = SampleMatrix::from_columns(&[vec![0.5, 0.2, 0.9]]).unwrap();
        let out = ecc(&[vec![1.0, 2.0, 3.0]], &raw, &mut rng).unwrap();
        assert_eq!(out.column(0), vec![2.0, 1.0, 3.0]);
        let raw = SampleMatrix::from_columns(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let out = ecc(&[vec![4.0, 5.0, 6.0]], &raw, &mut rng).unwrap();
        assert_eq!(out.column(0), vec![4.0, 5.0, 6.0]);
        assert!(ecc(&[vec![1.0, 2.0]], &raw, &mut rng).is_err());
        assert!(ecc(&[vec![3.0, 2.0, 1.0]], &raw, &mut rng).is_err());
    }

    #[test]
    fn ecc_all_ties_uniform() {
        let mut rng = stream!(2, "ecc-ties");
        let raw = SampleMatrix::from_columns(&[vec![7.0; 3]]).unwrap();
        let sorted = vec![vec![1.0, 2.0, 3.0]];
        let perms: [[f64; 3]; 6] = [
            [1.0, 2.0, 3.0],
            [1.0, 3.0, 2.0],
            [2.0, 1.0, 3.0],
            [2.0, 3.0, 1.0],
            [3.0, 1.0, 2.0],
            [3.0, 2.0, 1.0],
        ];
        let mut counts = [0u32; 6];
        let n = 10_000;
        for _ in 0..n {
            let col = ecc(&sorted, &raw, &mut rng).unwrap().column(0);
            let idx = perms.iter().position(|p| p.as_slice() == col.as_slice()).unwrap();
            counts[idx] += 1;
        }
        let p = 1.0 / 6.0;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() < 5.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn naive_examples() {
        let cols = vec![vec![1.0, 2.0, 3.0], vec![10.0, 20.0, 30.0]];
        let m = naive_multivariate(&cols).unwrap();
        assert_eq!(m.column(0), cols[0]);
        assert_eq!(m.column(1), cols[1]);
        let m = naive_multivariate(&[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        assert!(m.rows().all(|r| r[0] == r[1]));
    }

    #[test]
    fn matrix_shapes() {
        let m = SampleMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!((m.n_members(), m.n_dims()), (3, 2));
        assert_eq!(m.column(1), vec![2.0, 4.0, 6.0]);
        assert_eq!(m.row(2), &[5.0, 6.0]);
        assert!(SampleMatrix::new(2, 2, vec![1.0; 3]).is_err());
    }

    proptest! {
        #[test]
        fn reorder_preserves_multisets(
            cols in proptest::collection::vec(proptest::collection::vec(0u32..20, 9), 1..5),
            tmpl in proptest::collection::vec(0u32..5, 45),
            seed in 0u64..100,
        ) {
            let d = cols.len();
            let sorted: Vec<Vec<f64>> = cols.iter().map(|c| {
                let mut v: Vec<f64> = c.iter().map(|&x| f64::from(x) * 100.0).collect();
                v.sort_by(f64::total_cmp);
                v
            }).collect();
            let template = SampleMatrix::new(9, d, tmpl[..9 * d].iter().map(|&x| f64::from(x)).collect()).unwrap();
            let mut rng = stream!(seed, "prop");
            let out = reorder(&sorted, &template, &mut rng).unwrap();
            for j in 0..d {
                let mut col = out.column(j);
                col.sort_by(f64::total_cmp);
                prop_assert_eq!(&col, &sorted[j]);
                // template order is respected wherever the template is strict
                let t = template.column(j);
                let o = out.column(j);
                for a in 0..9 {
                    for b in 0..9 {
                        if t[a] < t[b] {
                            prop_assert!(o[a] <= o[b]);
                        }
                    }
                }
            }
        }

        #[test]
        fn quantile_cdf_close(w in proptest::collection::vec(0.0f64..1.0, 84), k in 1usize..120) {
            let scale = build_scale();
            let pmf = Pmf::from_weights(w).unwrap();
            let q = equidistant_quantiles(&pmf, k, &scale, QuantileLevels::Midpoint).unwrap();
            let cdf = pmf.cdf();
            let max_p = pmf.probs().iter().cloned().fold(0.0, f64::max);
            for (c, value) in scale.values().enumerate() {
                let emp = q.iter().filter(|&&v| v <= value).count() as f64 / k as f64;
                prop_assert!((emp - cdf[c]).abs() <= 1.0 / k as f64 + max_p + 1e-12);
            }
        }
    }
}
