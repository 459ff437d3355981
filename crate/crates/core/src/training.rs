//! Training-set assembly: rolling windows and local, regional or
//! cluster-based (semi-local) pooling of stations.

use chrono::{DateTime, Datelike, Duration, NaiveDate, NaiveTime, Utc};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::domain::{Dataset, ForecastCase};
use crate::{stream, Error, Result};

/// Upper edges (inclusive) of the observation-frequency bands, meters.
const FREQUENCY_BANDS: [f64; 2] = [5000.0, 30_000.0];
const KMEANS_MAX_ITER: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum TrainingScheme {
    Local,
    Regional,
    SemiLocal { k: usize },
}

impl TrainingScheme {
    /// One-letter suffix used in model names (`POLR-L`, `MLP-C`, ...).
    pub fn code(self) -> &'static str {
        match self {
            TrainingScheme::Local => "L",
            TrainingScheme::Regional => "R",
            TrainingScheme::SemiLocal { .. } => "C",
        }
    }

    pub fn validate(self) -> Result<()> {
        if let TrainingScheme::SemiLocal { k: 0 } = self {
            return Err(Error::invalid("cluster count must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RollingWindow {
    pub length_days: u32,
}

impl Default for RollingWindow {
    fn default() -> Self {
        Self { length_days: 350 }
    }
}

impl RollingWindow {
    pub fn new(length_days: u32) -> Result<Self> {
        if length_days == 0 {
            return Err(Error::invalid("window length must be at least one day"));
        }
        Ok(Self { length_days })
    }

    /// First date of the window preceding `forecast_date`.
    pub fn start(&self, forecast_date: NaiveDate) -> NaiveDate {
        forecast_date - Duration::days(i64::from(self.length_days))
    }
}

/// Labels per input vector plus centroids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment<const N: usize = 3> {
    pub labels: Vec<usize>,
    #[serde(with = "centroid_serde")]
    pub centroids: Vec<[f64; N]>,
    /// Within-cluster sum of squares after each assignment step.
    pub wcss_trace: Vec<f64>,
}

mod centroid_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer, const N: usize>(v: &[[f64; N]], s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<&[f64]> = v.iter().map(|r| r.as_slice()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>, const N: usize>(d: D) -> Result<Vec<[f64; N]>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        rows.into_iter()
            .map(|r| {
                <[f64; N]>::try_from(r.as_slice())
                    .map_err(|_| serde::de::Error::custom(format!("centroid must have {N} entries")))
            })
            .collect()
    }
}

impl<const N: usize> ClusterAssignment<N> {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    /// Input indices grouped by cluster; empty clusters omitted.
    pub fn partition(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.k()];
        for (i, &l) in self.labels.iter().enumerate() {
            groups[l].push(i);
        }
        groups.retain(|g| !g.is_empty());
        groups
    }
}

fn sq_dist<const N: usize>(a: &[f64; N], b: &[f64; N]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn nearest<const N: usize>(p: &[f64; N], centroids: &[[f64; N]]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best.0
}

/// Lloyd's algorithm from `k` distinct seeded starting points. An empty
/// cluster is moved onto the point farthest from its current centroid.
pub fn kmeans<const N: usize>(vectors: &[[f64; N]], k: usize, seed: u64) -> Result<ClusterAssignment<N>> {
    let n = vectors.len();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("cannot form {k} clusters from {n} vectors")));
    }
    if vectors.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("k-means input must be finite"));
    }
    let mut rng = stream!(seed, "kmeans");
    let mut starts = sample(&mut rng, n, k).into_vec();
    starts.sort_unstable();
    let mut centroids: Vec<[f64; N]> = starts.iter().map(|&i| vectors[i]).collect();
    let mut labels: Vec<usize> = vec![usize::MAX; n];
    let mut wcss_trace = Vec::new();

    for _ in 0..KMEANS_MAX_ITER {
        let new_labels: Vec<usize> = vectors.iter().map(|p| nearest(p, &centroids)).collect();
        wcss_trace.push(vectors.iter().zip(&new_labels).map(|(p, &l)| sq_dist(p, &centroids[l])).sum());
        if new_labels == labels {
            break;
        }
        labels = new_labels;

        let mut sums = vec![[0.0; N]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in vectors.iter().zip(&labels) {
            counts[l] += 1;
            sums[l].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j].map(|s| s / counts[j] as f64);
            }
        }
        let mut taken = vec![false; n];
        for j in (0..k).filter(|&j| counts[j] == 0) {
            let far = (0..n)
                .filter(|&i| !taken[i])
                .max_by(|&a, &b| {
                    let da = sq_dist(&vectors[a], &centroids[labels[a]]);
                    let db = sq_dist(&vectors[b], &centroids[labels[b]]);
                    da.total_cmp(&db).then(b.cmp(&a))
                })
                .expect("k <= n leaves a free point");
            taken[far] = true;
            centroids[j] = vectors[far];
        }
    }
    Ok(ClusterAssignment { labels, centroids, wcss_trace })
}

fn day_start(date: NaiveDate) -> DateTime<Utc> {
    date.and_time(NaiveTime::MIN).and_utc()
}

/// Observed categories of a station with valid dates in the window before
/// `forecast_date`, optionally restricted to one time of day.
pub fn window_observations(
    dataset: &Dataset,
    station: usize,
    window: RollingWindow,
    forecast_date: NaiveDate,
    time_of_day: Option<NaiveTime>,
) -> Vec<usize> {
    dataset
        .station_observations(station, day_start(window.start(forecast_date)), day_start(forecast_date))
        .filter(|(t, _)| time_of_day.is_none_or(|tod| t.time() == tod))
        .map(|(_, k)| k)
        .collect()
}

/// Relative frequencies of window observations in the bands
/// [0, 5000], (5000, 30000] and above 30000 m.
pub fn station_frequency_features(
    dataset: &Dataset,
    station: usize,
    window: RollingWindow,
    forecast_date: NaiveDate,
) -> Result<[f64; 3]> {
    let obs = window_observations(dataset, station, window, forecast_date, None);
    if obs.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no observations for station {} in the {}-day window before {forecast_date}",
            dataset.stations()[station].id,
            window.length_days
        )));
    }
    let mut counts = [0.0; 3];
    for k in &obs {
        let v = dataset.scale().value(*k);
        let band = FREQUENCY_BANDS.iter().position(|&edge| v <= edge).unwrap_or(2);
        counts[band] += 1.0;
    }
    Ok(counts.map(|c| c / obs.len() as f64))
}

/// Clusters every station of the dataset on its window frequencies.
/// Labels are indexed by station.
pub fn cluster_stations(
    dataset: &Dataset,
    window: RollingWindow,
    forecast_date: NaiveDate,
    k: usize,
    seed: u64,
) -> Result<ClusterAssignment> {
    let features = (0..dataset.stations().len())
        .map(|s| station_frequency_features(dataset, s, window, forecast_date))
        .collect::<Result<Vec<_>>>()?;
    let date_seed = stream_seed(seed, forecast_date);
    kmeans(&features, k, date_seed)
}

fn stream_seed(seed: u64, date: NaiveDate) -> u64 {
    use rand::Rng;
    stream!(seed, "clusters", date.num_days_from_ce()).random()
}

/// Stations pooled with `station` under the scheme, in index order.
pub fn training_stations(
    dataset: &Dataset,
    scheme: TrainingScheme,
    window: RollingWindow,
    station: usize,
    forecast_date: NaiveDate,
    seed: u64,
) -> Result<Vec<usize>> {
    scheme.validate()?;
    Ok(match scheme {
        TrainingScheme::Local => vec![station],
        TrainingScheme::Regional => (0..dataset.stations().len()).collect(),
        TrainingScheme::SemiLocal { k } => {
            let clusters = cluster_stations(dataset, window, forecast_date, k, seed)?;
            let own = clusters.labels[station];
            (0..dataset.stations().len()).filter(|&s| clusters.labels[s] == own).collect()
        }
    })
}

/// Observed cases of the given stations and lead time initialized within
/// the window before `forecast_date`, paired with their labels.
pub fn training_cases<'a>(
    dataset: &'a Dataset,
    stations: &[usize],
    window: RollingWindow,
    forecast_date: NaiveDate,
    lead_time_h: u32,
) -> Vec<(&'a ForecastCase, usize)> {
    let from = window.start(forecast_date);
    stations
        .iter()
        .flat_map(|&s| dataset.station_cases(s, lead_time_h, from, forecast_date))
        .filter_map(|c| c.observation.map(|y| (c, y)))
        .collect()
}

pub fn select_training<'a>(
    dataset: &'a Dataset,
    scheme: TrainingScheme,
    window: RollingWindow,
    station: usize,
    forecast_date: NaiveDate,
    lead_time_h: u32,
    seed: u64,
) -> Result<Vec<(&'a ForecastCase, usize)>> {
    let stations = training_stations(dataset, scheme, window, station, forecast_date, seed)?;
    let cases = training_cases(dataset, &stations, window, forecast_date, lead_time_h);
    if cases.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no training cases for scheme {} at station {}, date {forecast_date}, lead {lead_time_h} h",
            scheme.code(),
            dataset.stations()[station].id
        )));
    }
    Ok(cases)
}
