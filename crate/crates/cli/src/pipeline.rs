//! Experiment stages: training and prediction, multivariate
//! construction, verification and reporting.

use std::collections::{BTreeMap, HashMap};

use anyhow::{bail, Context, Result};
use chrono::{Datelike, Duration, NaiveDate};
use rand::Rng;
use rayon::prelude::*;
use viscal_core::classifiers::{mlp_fit, polr_fit, polr_fit_warm, ModelArtifact, Pmf};
use viscal_core::features::{build_features, FeatureConfig};
use viscal_core::mvconstruct::{
    ecc, equidistant_quantiles, mv_climatology, naive_multivariate, schaake_shuffle, SampleMatrix,
};
use viscal_core::mvscore::{
    dependence_weights, energy_score, pre_rank, stationary_bootstrap_ci, stationary_bootstrap_skill_ci,
    variogram_score, PreRankKind, WeightMatrix,
};
use viscal_core::training::{cluster_stations, training_cases, window_observations, RollingWindow, TrainingScheme};
use viscal_core::uniscore::{crps_discrete, logs, mean, verification_rank, RankHistogram, ScoreKind};
use viscal_core::{climatology_pmf, ingest_csv, stream, synth, CsvPaths, Dataset, ForecastCase, TrainOptions};

use crate::config::{ConfigError, ExperimentConfig, Method, ModelSpec, MvMethod, VsWeights};

pub const RAW: &str = "raw";
pub const CLIM: &str = "clim";
pub const MVCLIM: &str = "mvclim";
/// Kind label of per-station rank histograms of multivariate samples.
pub const UNIVARIATE_KIND: &str = "univariate";

/// One predictive PMF for a station, forecast date and lead time.
#[derive(Debug, Clone, PartialEq)]
pub struct UniForecast {
    pub model: String,
    pub station: usize,
    pub init_date: NaiveDate,
    pub lead_time_h: u32,
    pub pmf: Pmf,
}

/// A K-member sample over all stations for one forecast date and lead.
#[derive(Debug, Clone, PartialEq)]
pub struct MvForecast {
    pub model: String,
    pub init_date: NaiveDate,
    pub lead_time_h: u32,
    pub sample: SampleMatrix,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct ClusterRecord {
    pub forecast_date: NaiveDate,
    pub lead_time_h: u32,
    pub station: usize,
    pub cluster: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub model: String,
    pub lead_time_h: u32,
    pub score: ScoreKind,
    pub mean: f64,
    pub n_cases: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesRow {
    pub model: String,
    pub lead_time_h: u32,
    pub score: ScoreKind,
    pub date: NaiveDate,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramRow {
    pub model: String,
    /// `None` pools all lead times.
    pub lead_time_h: Option<u32>,
    pub kind: String,
    pub histogram: RankHistogram,
    pub ri: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Verification {
    pub scores: Vec<ScoreRow>,
    pub series: Vec<SeriesRow>,
    pub histograms: Vec<HistogramRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub model: String,
    pub lead_time_h: u32,
    pub score: ScoreKind,
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub reference: Option<String>,
    pub skill: f64,
    pub skill_lo: f64,
    pub skill_hi: f64,
}

/// A model fitted for one training group.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub name: String,
    pub lead_time_h: u32,
    /// Station id for local models, `all` or `cluster<k>` otherwise.
    pub group: String,
    pub stations: Vec<usize>,
    pub artifact: ModelArtifact,
}

pub struct Predictions {
    pub forecasts: Vec<UniForecast>,
    pub clusters: Vec<ClusterRecord>,
}

struct Group {
    name: String,
    cluster: Option<usize>,
    stations: Vec<usize>,
}

struct CaseFeatures {
    base: Vec<f64>,
    aux: Option<Vec<f64>>,
}

type CaseKey = (usize, NaiveDate, u32);

pub fn load_dataset(config: &ExperimentConfig) -> Result<Dataset> {
    match &config.data.csv_dir {
        Some(dir) => {
            let (ds, report) = ingest_csv(&CsvPaths::in_dir(dir), config.ensemble_members)
                .with_context(|| format!("loading CSV data from {}", dir.display()))?;
            if report.clamped_observations > 0 || report.cases_without_observation > 0 {
                eprintln!(
                    "note: {} observations clamped to the scale maximum, {} cases without observation",
                    report.clamped_observations, report.cases_without_observation
                );
            }
            Ok(ds)
        }
        None => Ok(synth::generate(&config.data.synth).context("generating synthetic data")?),
    }
}

fn day_key(d: NaiveDate) -> i64 {
    i64::from(d.num_days_from_ce())
}

fn derived_seed<R: Rng>(mut rng: R) -> u64 {
    rng.random()
}

pub struct Experiment {
    pub config: ExperimentConfig,
    pub dataset: Dataset,
    specs: Vec<ModelSpec>,
    features: HashMap<CaseKey, CaseFeatures>,
    dates: Vec<NaiveDate>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        let dataset = load_dataset(&config)?;
        Self::with_dataset(config, dataset)
    }

    pub fn with_dataset(config: ExperimentConfig, dataset: Dataset) -> Result<Self> {
        config.validate()?;
        let specs = config.model_specs()?;
        if dataset.ensemble_size() != config.ensemble_members {
            return Err(ConfigError(format!(
                "ensemble_members {} differs from the data's ensemble size {}",
                config.ensemble_members,
                dataset.ensemble_size()
            ))
            .into());
        }
        let need_aux = specs.iter().any(|s| s.aux);
        let base_cfg = FeatureConfig::with_aux(false);
        let aux_cfg = FeatureConfig::with_aux(true);
        let cases: Vec<&ForecastCase> = dataset.cases().collect();
        let built: Vec<(CaseKey, CaseFeatures)> = cases
            .par_iter()
            .map(|c| -> Result<(CaseKey, CaseFeatures)> {
                let station = dataset.station_idx(&c.station_id).expect("joined station");
                let base = build_features(c, &base_cfg)?.to_vec();
                let aux = if need_aux { Some(build_features(c, &aux_cfg)?.to_vec()) } else { None };
                Ok(((station, c.init_date(), c.lead_time_h), CaseFeatures { base, aux }))
            })
            .collect::<Result<_>>()?;
        let features = built.into_iter().collect();

        let all_dates = dataset.init_dates();
        let Some(&first) = all_dates.first() else {
            bail!(ConfigError("dataset has no forecast cases".into()));
        };
        let earliest = first + Duration::days(1);
        let from = config.verify_from.unwrap_or(first + Duration::days(i64::from(config.window_days)));
        if from < earliest {
            bail!(ConfigError(format!(
                "verification starts {from}, before the earliest trainable date {earliest}"
            )));
        }
        let dates: Vec<NaiveDate> = all_dates
            .into_iter()
            .filter(|d| *d >= from && config.verify_to.is_none_or(|to| *d <= to))
            .collect();
        if dates.is_empty() {
            bail!(ConfigError("verification period contains no forecast dates".into()));
        }
        Ok(Self { config, dataset, specs, features, dates })
    }

    pub fn verification_dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn specs(&self) -> &[ModelSpec] {
        &self.specs
    }

    fn window(&self) -> RollingWindow {
        RollingWindow { length_days: self.config.window_days }
    }

    fn features(&self, spec: &ModelSpec, key: CaseKey) -> Result<&[f64]> {
        let f = self
            .features
            .get(&key)
            .with_context(|| format!("no features for case {key:?}"))?;
        Ok(if spec.aux {
            f.aux.as_deref().context("aux features were not built")?
        } else {
            &f.base
        })
    }

    /// Training groups for a fit date: each station alone, all stations,
    /// or the k-means clusters of the window.
    fn groups(&self, spec: &ModelSpec, fit_date: NaiveDate) -> Result<Vec<Group>> {
        let stations = self.dataset.stations();
        Ok(match spec.scheme {
            TrainingScheme::Local => stations
                .iter()
                .enumerate()
                .map(|(i, s)| Group { name: s.id.clone(), cluster: None, stations: vec![i] })
                .collect(),
            TrainingScheme::Regional => {
                vec![Group { name: "all".into(), cluster: None, stations: (0..stations.len()).collect() }]
            }
            TrainingScheme::SemiLocal { k } => {
                let k = k.min(stations.len());
                let clusters = cluster_stations(&self.dataset, self.window(), fit_date, k, self.config.seed)
                    .with_context(|| format!("clustering stations for {fit_date}"))?;
                (0..k)
                    .map(|c| {
                        let members: Vec<usize> = (0..stations.len()).filter(|&s| clusters.labels[s] == c).collect();
                        Group { name: format!("cluster{c}"), cluster: Some(c), stations: members }
                    })
                    .filter(|g| !g.stations.is_empty())
                    .collect()
            }
        })
    }

    /// Fits one group's model. POLR fits start from `previous` when given.
    fn fit(
        &self,
        spec: &ModelSpec,
        stations: &[usize],
        fit_date: NaiveDate,
        lead: u32,
        group: &str,
        previous: Option<&ModelArtifact>,
    ) -> Result<ModelArtifact> {
        let cases = training_cases(&self.dataset, stations, self.window(), fit_date, lead);
        if cases.is_empty() {
            bail!(viscal_core::Error::InsufficientData(format!(
                "no training cases for {spec} group {group}, date {fit_date}, lead {lead} h"
            )));
        }
        let mut x = Vec::with_capacity(cases.len());
        let mut y = Vec::with_capacity(cases.len());
        for (c, label) in &cases {
            let s = self.dataset.station_idx(&c.station_id).expect("joined station");
            x.push(self.features(spec, (s, c.init_date(), lead))?.to_vec());
            y.push(*label);
        }
        let context = || format!("fitting {spec} group {group}, date {fit_date}, lead {lead} h");
        Ok(match spec.method {
            Method::Polr => {
                let fcfg = FeatureConfig::with_aux(spec.aux);
                let opts = TrainOptions {
                    max_iter: self.config.polr.max_iter,
                    tolerance: self.config.polr.tolerance,
                    ..TrainOptions::polr()
                };
                let mask = fcfg.nonnegative_mask();
                let fitted = match previous {
                    Some(ModelArtifact::Polr(prev)) => polr_fit_warm(&x, &y, &mask, &opts, prev),
                    _ => polr_fit(&x, &y, &mask, &opts),
                };
                ModelArtifact::Polr(fitted.with_context(context)?)
            }
            Method::Mlp => {
                let name = spec.to_string();
                let seed = derived_seed(stream!(self.config.seed, "mlp", &name, group, lead, day_key(fit_date)));
                let opts = self.config.mlp.options(seed);
                ModelArtifact::Mlp(mlp_fit(&x, &y, &self.config.mlp.architecture(), &opts).with_context(context)?)
            }
        })
    }

    /// Fits every configured model for one forecast date.
    pub fn train(&self, fit_date: NaiveDate) -> Result<Vec<TrainedModel>> {
        let leads = self.dataset.lead_times();
        let tasks: Vec<(ModelSpec, u32)> = self.specs.iter().flat_map(|s| leads.iter().map(move |&l| (*s, l))).collect();
        let nested: Vec<Vec<TrainedModel>> = tasks
            .par_iter()
            .map(|(spec, lead)| {
                self.groups(spec, fit_date)?
                    .into_iter()
                    .map(|g| {
                        let artifact = self.fit(spec, &g.stations, fit_date, *lead, &g.name, None)?;
                        Ok(TrainedModel {
                            name: spec.to_string(),
                            lead_time_h: *lead,
                            group: g.name,
                            stations: g.stations,
                            artifact,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        Ok(nested.into_iter().flatten().collect())
    }

    /// Raw-ensemble, climatological and trained PMFs for every
    /// verification case, in model, lead, date, station order.
    pub fn predict(&self) -> Result<Predictions> {
        let leads = self.dataset.lead_times();
        let scale = self.dataset.scale();
        let n_stations = self.dataset.stations().len();
        let clim_window = RollingWindow { length_days: self.config.climatology_days };

        let mut forecasts = Vec::new();
        for name in [RAW, CLIM] {
            let per_lead: Vec<Vec<UniForecast>> = leads
                .par_iter()
                .map(|&lead| {
                    let mut out = Vec::new();
                    for &date in &self.dates {
                        for s in 0..n_stations {
                            let Some(case) = self.dataset.case(s, date, lead) else { continue };
                            let pmf = if name == RAW {
                                Pmf::from_members(case.ensemble.members(), scale)?
                            } else {
                                let tod = case.valid_time().time();
                                let obs = window_observations(&self.dataset, s, clim_window, date, Some(tod));
                                climatology_pmf(&obs).with_context(|| {
                                    format!(
                                        "climatology for station {} date {date} lead {lead} h",
                                        self.dataset.stations()[s].id
                                    )
                                })?
                            };
                            out.push(UniForecast { model: name.into(), station: s, init_date: date, lead_time_h: lead, pmf });
                        }
                    }
                    Ok(out)
                })
                .collect::<Result<_>>()?;
            forecasts.extend(per_lead.into_iter().flatten());
        }

        let tasks: Vec<(ModelSpec, u32)> = self.specs.iter().flat_map(|s| leads.iter().map(move |&l| (*s, l))).collect();
        let results: Vec<(Vec<UniForecast>, Vec<ClusterRecord>)> = tasks
            .par_iter()
            .map(|&(spec, lead)| self.predict_chain(&spec, lead))
            .collect::<Result<_>>()?;
        let mut clusters = Vec::new();
        for (f, c) in results {
            forecasts.extend(f);
            clusters.extend(c);
        }
        clusters.sort();
        clusters.dedup();
        Ok(Predictions { forecasts, clusters })
    }

    /// Refits one model and lead time through the verification period,
    /// every `refit_every_days` days. Each POLR fit starts from the same
    /// group's previous parameters.
    fn predict_chain(&self, spec: &ModelSpec, lead: u32) -> Result<(Vec<UniForecast>, Vec<ClusterRecord>)> {
        let n_stations = self.dataset.stations().len();
        let name = spec.to_string();
        let mut previous: HashMap<String, ModelArtifact> = HashMap::new();
        let mut out = Vec::new();
        let mut clusters = Vec::new();
        for dates in self.dates.chunks(self.config.refit_every_days as usize) {
            let fit_date = dates[0];
            let mut by_station: Vec<Option<(usize, Option<usize>)>> = vec![None; n_stations];
            let mut models = Vec::new();
            for g in self.groups(spec, fit_date)? {
                let model = self.fit(spec, &g.stations, fit_date, lead, &g.name, previous.get(&g.name))?;
                for &s in &g.stations {
                    by_station[s] = Some((models.len(), g.cluster));
                }
                models.push((g.name, model));
            }
            for &date in dates {
                for (s, entry) in by_station.iter().enumerate() {
                    let Some((mi, cluster)) = *entry else { continue };
                    if let Some(cluster) = cluster {
                        clusters.push(ClusterRecord { forecast_date: date, lead_time_h: lead, station: s, cluster });
                    }
                    if self.dataset.case(s, date, lead).is_none() {
                        continue;
                    }
                    let x = self.features(spec, (s, date, lead))?;
                    let pmf = models[mi].1.predict(x).with_context(|| {
                        format!("predicting {name} station {} date {date} lead {lead} h", self.dataset.stations()[s].id)
                    })?;
                    out.push(UniForecast { model: name.clone(), station: s, init_date: date, lead_time_h: lead, pmf });
                }
            }
            previous = models.into_iter().collect();
        }
        Ok((out, clusters))
    }

    fn observed_vector(&self, date: NaiveDate, lead: u32) -> Option<Vec<f64>> {
        let scale = self.dataset.scale();
        (0..self.dataset.stations().len())
            .map(|s| self.dataset.case(s, date, lead)?.observation.map(|k| scale.value(k)))
            .collect()
    }

    /// Raw, climatological and reordered multivariate samples for every
    /// verification date and lead with all stations present.
    pub fn multivariate(&self, forecasts: &[UniForecast]) -> Result<Vec<MvForecast>> {
        let k = self.config.ensemble_members;
        let scale = self.dataset.scale();
        let n_stations = self.dataset.stations().len();
        let all_stations: Vec<usize> = (0..n_stations).collect();
        let index: HashMap<(&str, usize, NaiveDate, u32), &Pmf> = forecasts
            .iter()
            .map(|f| ((f.model.as_str(), f.station, f.init_date, f.lead_time_h), &f.pmf))
            .collect();
        let leads = self.dataset.lead_times();
        let tasks: Vec<(u32, NaiveDate)> = leads.iter().flat_map(|&l| self.dates.iter().map(move |&d| (l, d))).collect();

        let nested: Vec<Vec<MvForecast>> = tasks
            .par_iter()
            .map(|&(lead, date)| -> Result<Vec<MvForecast>> {
                let cases: Option<Vec<&ForecastCase>> = (0..n_stations).map(|s| self.dataset.case(s, date, lead)).collect();
                let Some(cases) = cases else { return Ok(Vec::new()) };
                let tod = cases[0].valid_time().time();
                let raw_rows: Vec<Vec<f64>> = (0..k)
                    .map(|m| cases.iter().map(|c| c.ensemble.members().nth(m).expect("member")).collect())
                    .collect();
                let raw = SampleMatrix::from_rows(&raw_rows)?;
                let mut out = Vec::new();
                let discretized: Vec<f64> = raw_rows
                    .iter()
                    .flatten()
                    .map(|&v| scale.round_down(v))
                    .collect::<viscal_core::Result<_>>()?;
                out.push(MvForecast {
                    model: RAW.into(),
                    init_date: date,
                    lead_time_h: lead,
                    sample: SampleMatrix::new(k, n_stations, discretized)?,
                });
                if self.config.mv_methods.contains(&MvMethod::MvClim) {
                    let clim_window = RollingWindow { length_days: self.config.climatology_days };
                    let sample = mv_climatology(&self.dataset, &all_stations, date, tod, clim_window, k, self.config.quantile_levels)
                        .with_context(|| format!("multivariate climatology for {date} lead {lead} h"))?;
                    out.push(MvForecast { model: MVCLIM.into(), init_date: date, lead_time_h: lead, sample });
                }
                for model in &self.config.mv_models {
                    let pmfs: Option<Vec<&Pmf>> =
                        (0..n_stations).map(|s| index.get(&(model.as_str(), s, date, lead)).copied()).collect();
                    let Some(pmfs) = pmfs else { continue };
                    let sorted: Vec<Vec<f64>> = pmfs
                        .iter()
                        .map(|p| equidistant_quantiles(p, k, scale, self.config.quantile_levels))
                        .collect::<viscal_core::Result<_>>()?;
                    for method in &self.config.mv_methods {
                        let sample = match method {
                            MvMethod::Naive => naive_multivariate(&sorted)?,
                            MvMethod::Ecc => {
                                let mut rng = stream!(self.config.seed, "ecc", model, lead, day_key(date));
                                ecc(&sorted, &raw, &mut rng)?
                            }
                            MvMethod::Ssh => {
                                let mut rng = stream!(self.config.seed, "ssh", model, lead, day_key(date));
                                schaake_shuffle(&sorted, &self.dataset, &all_stations, self.window(), date, tod, k, &mut rng)
                                    .with_context(|| format!("Schaake shuffle for {model} {date} lead {lead} h"))?
                                    .0
                            }
                            MvMethod::MvClim => continue,
                        };
                        out.push(MvForecast {
                            model: format!("{model}:{}", method.as_str()),
                            init_date: date,
                            lead_time_h: lead,
                            sample,
                        });
                    }
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        let mut all: Vec<MvForecast> = nested.into_iter().flatten().collect();
        all.sort_by(|a, b| (&a.model, a.lead_time_h, a.init_date).cmp(&(&b.model, b.lead_time_h, b.init_date)));
        Ok(all)
    }

    pub fn verify(&self, forecasts: &[UniForecast], mv: &[MvForecast]) -> Result<Verification> {
        let scale = self.dataset.scale();
        let p_min = self.config.p_min;

        // (model, lead, score) -> date -> per-case values
        type Acc = BTreeMap<(String, u32, ScoreKind), BTreeMap<NaiveDate, Vec<f64>>>;
        let uni_scores: Vec<Option<(f64, f64)>> = forecasts
            .par_iter()
            .map(|f| {
                let y = self.dataset.case(f.station, f.init_date, f.lead_time_h)?.observation?;
                Some((crps_discrete(&f.pmf, y, scale), logs(&f.pmf, y, p_min)))
            })
            .collect();
        let mut acc: Acc = BTreeMap::new();
        for (f, s) in forecasts.iter().zip(uni_scores) {
            let Some((crps, ls)) = s else { continue };
            for (kind, v) in [(ScoreKind::Crps, crps), (ScoreKind::Logs, ls)] {
                acc.entry((f.model.clone(), f.lead_time_h, kind)).or_default().entry(f.init_date).or_default().push(v);
            }
        }

        let vs_weights = match self.config.vs_weights {
            VsWeights::Unit => WeightMatrix::unit(self.dataset.stations().len()),
            VsWeights::Distance => dependence_weights(self.dataset.stations()),
        };
        let dep_weights = dependence_weights(self.dataset.stations());
        type Ranks = Vec<(String, usize)>;
        let mv_results: Vec<Option<(f64, f64, Ranks)>> = mv
            .par_iter()
            .map(|f| -> Result<Option<(f64, f64, Ranks)>> {
                let Some(obs) = self.observed_vector(f.init_date, f.lead_time_h) else { return Ok(None) };
                let es = energy_score(&f.sample, &obs)?;
                let vs = variogram_score(&f.sample, &obs, &vs_weights, 0.5)?;
                let mut rng = stream!(self.config.seed, "ranks", &f.model, f.lead_time_h, day_key(f.init_date));
                let mut ranks = Vec::new();
                for (d, &y) in obs.iter().enumerate() {
                    ranks.push((UNIVARIATE_KIND.to_string(), verification_rank(&f.sample.column(d), y, &mut rng)));
                }
                for kind in PreRankKind::ALL {
                    let r = pre_rank(kind, &f.sample, &obs, Some(&dep_weights), &mut rng)?;
                    ranks.push((kind.as_str().to_string(), r));
                }
                Ok(Some((es, vs, ranks)))
            })
            .collect::<Result<_>>()?;

        let mut hist: BTreeMap<(String, Option<u32>, String), RankHistogram> = BTreeMap::new();
        for (f, r) in mv.iter().zip(mv_results) {
            let Some((es, vs, ranks)) = r else { continue };
            for (kind, v) in [(ScoreKind::Es, es), (ScoreKind::Vs, vs)] {
                acc.entry((f.model.clone(), f.lead_time_h, kind)).or_default().entry(f.init_date).or_default().push(v);
            }
            let k = f.sample.n_members();
            for (kind, rank) in ranks {
                for lead in [Some(f.lead_time_h), None] {
                    hist.entry((f.model.clone(), lead, kind.clone()))
                        .or_insert_with(|| RankHistogram::new(k))
                        .add(rank)?;
                }
            }
        }

        let mut out = Verification::default();
        for ((model, lead, score), by_date) in acc {
            let all: Vec<f64> = by_date.values().flatten().copied().collect();
            out.scores.push(ScoreRow { model: model.clone(), lead_time_h: lead, score, mean: mean(&all), n_cases: all.len() });
            for (date, values) in by_date {
                out.series.push(SeriesRow { model: model.clone(), lead_time_h: lead, score, date, value: mean(&values) });
            }
        }
        for ((model, lead, kind), histogram) in hist {
            let ri = viscal_core::reliability_index(&histogram)?;
            out.histograms.push(HistogramRow { model, lead_time_h: lead, kind, histogram, ri });
        }
        Ok(out)
    }
}

/// Mean scores with bootstrap intervals and skill against each reference.
pub fn report(config: &ExperimentConfig, series: &[SeriesRow]) -> Result<Vec<ReportRow>> {
    let mut grouped: BTreeMap<(&str, u32, ScoreKind), BTreeMap<NaiveDate, f64>> = BTreeMap::new();
    for r in series {
        grouped.entry((r.model.as_str(), r.lead_time_h, r.score)).or_default().insert(r.date, r.value);
    }
    let keys: Vec<(&str, u32, ScoreKind)> = grouped.keys().copied().collect();
    let rows: Vec<Vec<ReportRow>> = keys
        .par_iter()
        .map(|&(model, lead, score)| -> Result<Vec<ReportRow>> {
            let values: Vec<f64> = grouped[&(model, lead, score)].values().copied().collect();
            let seed = derived_seed(stream!(config.seed, "bootstrap", model, lead, score.as_str()));
            let ci = stationary_bootstrap_ci(&values, &config.bootstrap_options(seed))
                .with_context(|| format!("bootstrap for {model} {score} lead {lead} h"))?;
            let base = ReportRow {
                model: model.to_string(),
                lead_time_h: lead,
                score,
                mean: ci.estimate,
                ci_lo: ci.lo,
                ci_hi: ci.hi,
                reference: None,
                skill: f64::NAN,
                skill_lo: f64::NAN,
                skill_hi: f64::NAN,
            };
            let mut rows = Vec::new();
            for reference in &config.references {
                if reference == model {
                    continue;
                }
                let Some(ref_series) = grouped.get(&(reference.as_str(), lead, score)) else { continue };
                let own = &grouped[&(model, lead, score)];
                let (f, r): (Vec<f64>, Vec<f64>) =
                    own.iter().filter_map(|(d, v)| ref_series.get(d).map(|rv| (*v, *rv))).unzip();
                let seed = derived_seed(stream!(config.seed, "skill", model, reference, lead, score.as_str()));
                let s = stationary_bootstrap_skill_ci(&f, &r, &config.bootstrap_options(seed))
                    .with_context(|| format!("skill bootstrap for {model} vs {reference} {score} lead {lead} h"))?;
                rows.push(ReportRow { reference: Some(reference.clone()), skill: s.estimate, skill_lo: s.lo, skill_hi: s.hi, ..base.clone() });
            }
            if rows.is_empty() {
                rows.push(base);
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}
