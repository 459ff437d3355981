//! Seeded synthetic visibility data.
//!
//! A latent Gaussian field with exponential spatial covariance and AR(1)
//! persistence on a 6-hourly grid drives the truth. Forecasts are drawn
//! from the conditional law of the latent truth given a noisy forecast
//! centre, so a dispersion factor of 1 without bias gives an exchangeable,
//! calibrated ensemble. Latent values map to meters by `70000 * Phi(x)^2`.

use chrono::{DateTime, Datelike, Duration, NaiveDate, NaiveTime, Timelike, Utc};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::domain::{
    build_scale, haversine_km, validate_lead_time, Dataset, EnsembleForecast, ForecastCase, Station, MAX_VISIBILITY_M,
};
use crate::rng::StreamRng;
use crate::{stream, Error, Result};

const STEP_HOURS: i64 = 6;
const LAT_RANGE: (f64, f64) = (47.0, 55.0);
const LON_RANGE: (f64, f64) = (6.0, 15.0);
/// Latent forecast error standard deviation is capped below one.
const MAX_ERROR_SD: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_stations: usize,
    pub n_days: u32,
    pub lead_times: Vec<u32>,
    pub start_date: NaiveDate,
    pub ensemble_size: usize,
    pub correlation_length_km: f64,
    /// Lag-one autocorrelation of the latent field per 6-hour step.
    pub persistence: f64,
    /// Latent shift added to every member.
    pub ensemble_bias: f64,
    /// Scale of the member spread relative to the calibrated spread.
    pub dispersion: f64,
    /// Standard deviation of fixed per-station member biases.
    pub station_bias_sd: f64,
    /// Correlation of the auxiliary forecast with the latent truth.
    pub aux_skill: f64,
    /// Latent error standard deviation per square-root lead hour.
    pub error_growth: f64,
    /// Standard deviation of per-station climate offsets.
    pub climate_sd: f64,
    pub seasonal_amplitude: f64,
    pub diurnal_amplitude: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_stations: 10,
            n_days: 550,
            lead_times: vec![6, 48, 120],
            start_date: NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date"),
            ensemble_size: 51,
            correlation_length_km: 300.0,
            persistence: 0.8,
            ensemble_bias: 0.3,
            dispersion: 0.6,
            station_bias_sd: 0.3,
            aux_skill: 0.9,
            error_growth: 0.08,
            climate_sd: 0.4,
            seasonal_amplitude: 0.3,
            diurnal_amplitude: 0.2,
            seed: 1,
        }
    }
}

impl SynthConfig {
    /// Exchangeable ensemble: no bias, unit dispersion.
    pub fn calibrated() -> Self {
        Self { ensemble_bias: 0.0, dispersion: 1.0, station_bias_sd: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::invalid(m));
        if self.n_stations < 2 {
            return fail(format!("need at least 2 stations, got {}", self.n_stations));
        }
        if self.n_days < 40 {
            return fail(format!("need at least 40 days, got {}", self.n_days));
        }
        if self.lead_times.is_empty() {
            return fail("no lead times".into());
        }
        for &l in &self.lead_times {
            validate_lead_time(l)?;
        }
        if self.ensemble_size < 2 {
            return fail("ensemble size must be at least 2".into());
        }
        if !(self.dispersion > 0.0) {
            return fail(format!("dispersion factor must be positive, got {}", self.dispersion));
        }
        if !(0.0..1.0).contains(&self.persistence) {
            return fail(format!("persistence must lie in [0, 1), got {}", self.persistence));
        }
        if !(0.0..=1.0).contains(&self.aux_skill) {
            return fail(format!("aux skill must lie in [0, 1], got {}", self.aux_skill));
        }
        if !(self.correlation_length_km > 0.0) {
            return fail("correlation length must be positive".into());
        }
        for (name, v) in [
            ("error growth", self.error_growth),
            ("station bias sd", self.station_bias_sd),
            ("climate sd", self.climate_sd),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be finite and nonnegative, got {v}"));
            }
        }
        if !self.ensemble_bias.is_finite() || !self.seasonal_amplitude.is_finite() || !self.diurnal_amplitude.is_finite() {
            return fail("latent shifts must be finite".into());
        }
        Ok(())
    }
}

/// Generated dataset plus the latent truth behind it.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub dataset: Dataset,
    /// Valid time of every latent row.
    pub times: Vec<DateTime<Utc>>,
    /// Zero-mean latent field, one row per time, one column per station.
    pub latent: Vec<Vec<f64>>,
}

struct Field {
    chol: DMatrix<f64>,
}

impl Field {
    fn draw(&self, rng: &mut StreamRng) -> DVector<f64> {
        let n = self.chol.nrows();
        let e = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
        &self.chol * e
    }
}

fn to_meters(x: f64, phi: &Normal) -> f64 {
    MAX_VISIBILITY_M * phi.cdf(x).powi(2)
}

pub fn generate(config: &SynthConfig) -> Result<Dataset> {
    generate_detailed(config).map(|o| o.dataset)
}

pub fn generate_detailed(config: &SynthConfig) -> Result<SynthOutput> {
    config.validate()?;
    let mut rng = stream!(config.seed, "synth");
    let phi = Normal::new(0.0, 1.0).expect("standard normal");
    let scale = build_scale();

    let stations: Vec<Station> = (0..config.n_stations)
        .map(|i| {
            let lat = rng.random_range(LAT_RANGE.0..LAT_RANGE.1);
            let lon = rng.random_range(LON_RANGE.0..LON_RANGE.1);
            Station::new(format!("S{:03}", i + 1), lat, lon)
        })
        .collect::<Result<_>>()?;
    let n = stations.len();
    let cov = DMatrix::from_fn(n, n, |i, j| (-haversine_km(&stations[i], &stations[j]) / config.correlation_length_km).exp());
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::Numeric("spatial covariance is not positive definite".into()))?
        .l();
    let field = Field { chol };

    let climate: Vec<f64> = (0..n).map(|_| config.climate_sd * rng.sample::<f64, _>(StandardNormal)).collect();
    let station_bias: Vec<f64> = (0..n).map(|_| config.station_bias_sd * rng.sample::<f64, _>(StandardNormal)).collect();

    let max_lead = i64::from(*config.lead_times.iter().max().expect("nonempty"));
    let n_steps = (i64::from(config.n_days) * 24 + max_lead) / STEP_HOURS + 1;
    let t0 = config.start_date.and_time(NaiveTime::MIN).and_utc();
    let times: Vec<DateTime<Utc>> = (0..n_steps).map(|i| t0 + Duration::hours(i * STEP_HOURS)).collect();

    let a = config.persistence;
    let innovation = (1.0 - a * a).sqrt();
    let mut latent: Vec<Vec<f64>> = Vec::with_capacity(times.len());
    let mut z = field.draw(&mut rng);
    latent.push(z.iter().copied().collect());
    for _ in 1..times.len() {
        let e = field.draw(&mut rng);
        z = z * a + e * innovation;
        latent.push(z.iter().copied().collect());
    }

    let mean_at = |s: usize, t: &DateTime<Utc>| {
        let season = 2.0 * std::f64::consts::PI * f64::from(t.ordinal()) / 365.0;
        let day = 2.0 * std::f64::consts::PI * f64::from(t.hour()) / 24.0;
        climate[s] + config.seasonal_amplitude * season.cos() + config.diurnal_amplitude * day.cos()
    };

    let mut observations = Vec::with_capacity(times.len() * n);
    for (t, row) in times.iter().zip(&latent) {
        for (s, st) in stations.iter().enumerate() {
            let meters = to_meters(mean_at(s, t) + row[s], &phi);
            observations.push((st.id.clone(), *t, scale.discretize(meters)?));
        }
    }

    let k = config.ensemble_size;
    let aux_noise = (1.0 - config.aux_skill.powi(2)).sqrt();
    let mut cases = Vec::with_capacity(n * config.n_days as usize * config.lead_times.len());
    for d in 0..i64::from(config.n_days) {
        let init = t0 + Duration::days(d);
        for &lead in &config.lead_times {
            let step = ((d * 24 + i64::from(lead)) / STEP_HOURS) as usize;
            let valid = times[step];
            let truth = &latent[step];
            let err_sd = (config.error_growth * f64::from(lead).sqrt()).min(MAX_ERROR_SD);
            let rho = (1.0 - err_sd * err_sd).sqrt();
            let xi = field.draw(&mut rng);
            let centre: Vec<f64> = (0..n).map(|s| rho * truth[s] + err_sd * xi[s]).collect();
            let members: Vec<DVector<f64>> = (0..k).map(|_| field.draw(&mut rng)).collect();
            for (s, st) in stations.iter().enumerate() {
                let mu = mean_at(s, &valid);
                let loc = mu + rho * centre[s] + config.ensemble_bias + station_bias[s];
                let values: Vec<f64> = members
                    .iter()
                    .map(|eta| to_meters(loc + config.dispersion * err_sd * eta[s], &phi).floor())
                    .collect();
                let zeta: f64 = rng.sample(StandardNormal);
                let aux = to_meters(mu + config.aux_skill * truth[s] + aux_noise * zeta, &phi).floor();
                cases.push(ForecastCase {
                    station_id: st.id.clone(),
                    init_time: init,
                    lead_time_h: lead,
                    ensemble: EnsembleForecast::new(values[0], values[1..].to_vec())?,
                    aux_forecast: Some(aux),
                    observation: None,
                });
            }
        }
    }

    let dataset = Dataset::new(scale, k, stations, cases, observations)?;
    Ok(SynthOutput { dataset, times, latent })
}
