//! Discrete post-processing of ensemble visibility forecasts.
//!
//! The crate turns raw ensemble visibility forecasts into calibrated
//! predictive distributions over the 84 WMO reporting categories
//! (proportional odds logistic regression and a multilayer perceptron),
//! rebuilds spatial dependence across stations with ensemble copula
//! coupling and the Schaake shuffle, and verifies univariate and
//! multivariate forecasts with proper scores, rank histograms and
//! block-bootstrap confidence intervals.

pub mod classifiers;
pub mod domain;
mod error;
pub mod features;
pub mod mvconstruct;
pub mod mvscore;
pub mod rng;
pub mod synth;
pub mod training;
pub mod uniscore;

pub use classifiers::{
    climatology_pmf, mlp_fit, mlp_predict, pmf_floor, polr_fit, polr_predict, MlpArchitecture,
    MlpModel, ModelArtifact, Pmf, PolrModel, TrainOptions, DEFAULT_P_MIN,
};
pub use domain::{
    build_scale, haversine_km, ingest_csv, write_csv, CsvPaths, Dataset, EnsembleForecast,
    ForecastCase, LoadReport, Station, VisibilityScale,
};
pub use error::{Error, Result};
pub use features::{annual_basis, build_features, FeatureConfig, FeatureVector};
pub use mvconstruct::{
    ecc, equidistant_quantiles, mv_climatology, naive_multivariate, schaake_shuffle,
    DependenceTemplate, QuantileLevels, SampleMatrix,
};
pub use mvscore::{
    dependence_weights, energy_score, histogram, pre_rank, stationary_bootstrap_ci,
    variogram_score, BootstrapOptions, BootstrapResult, PreRankKind, WeightMatrix,
};
pub use synth::{generate, SynthConfig};
pub use training::{
    kmeans, select_training, station_frequency_features, ClusterAssignment, RollingWindow,
    TrainingScheme,
};
pub use uniscore::{
    crps_discrete, logs, reliability_index, skill_score, verification_rank, RankHistogram,
    ScoreKind, ScoreSeries,
};
