//! Classifier inputs derived from the ensemble and the auxiliary forecast.

use chrono::Datelike;
use serde::{Deserialize, Serialize};

use crate::domain::{ForecastCase, MAX_VISIBILITY_M};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub norm_denominator: f64,
    /// Upper bound of the lowest visibility band, inclusive.
    pub t1: f64,
    pub t2: f64,
    /// Members strictly above `t3` count toward the high-visibility share.
    pub t3: f64,
    pub include_aux: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            norm_denominator: MAX_VISIBILITY_M,
            t1: 1000.0,
            t2: 2000.0,
            t3: 30_000.0,
            include_aux: false,
        }
    }
}

impl FeatureConfig {
    pub fn with_aux(include_aux: bool) -> Self {
        Self {
            include_aux,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.t1 && self.t1 < self.t2 && self.t2 < self.t3 && self.t3 < self.norm_denominator) {
            return Err(Error::invalid(format!(
                "feature thresholds must satisfy 0 < t1 < t2 < t3 < denominator, got {} {} {} {}",
                self.t1, self.t2, self.t3, self.norm_denominator
            )));
        }
        Ok(())
    }

    /// Length of [`FeatureVector::to_vec`].
    pub fn dim(&self) -> usize {
        if self.include_aux {
            9
        } else {
            8
        }
    }

    /// Nonnegativity flags for the POLR coefficients: the forecast-valued
    /// inputs (control, ensemble mean, auxiliary) are constrained.
    pub fn nonnegative_mask(&self) -> Vec<bool> {
        let mut mask = vec![true, true];
        if self.include_aux {
            mask.push(true);
        }
        mask.extend([false; 6]);
        mask
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub ctrl_norm: f64,
    pub ens_mean_norm: f64,
    pub aux_norm: Option<f64>,
    pub ens_var: f64,
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl FeatureVector {
    /// Model input order: control, ensemble mean, [aux], variance,
    /// three band shares, two annual harmonics.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(9);
        v.push(self.ctrl_norm);
        v.push(self.ens_mean_norm);
        if let Some(a) = self.aux_norm {
            v.push(a);
        }
        v.extend([self.ens_var, self.p1, self.p2, self.p3, self.beta1, self.beta2]);
        v
    }
}

/// Annual harmonics `(sin(2πd/365), cos(2πd/365))` for day of year `d`.
pub fn annual_basis(day_of_year: u32) -> Result<(f64, f64)> {
    if !(1..=366).contains(&day_of_year) {
        return Err(Error::invalid(format!("day of year {day_of_year} outside 1..=366")));
    }
    let angle = 2.0 * std::f64::consts::PI * f64::from(day_of_year) / 365.0;
    Ok((angle.sin(), angle.cos()))
}

pub fn build_features(case: &ForecastCase, config: &FeatureConfig) -> Result<FeatureVector> {
    let denom = config.norm_denominator;
    let norm = |v: f64| (v / denom).clamp(0.0, 1.0);

    let k = case.ensemble.size() as f64;
    let ens = &case.ensemble.exchangeable;
    if ens.is_empty() {
        return Err(Error::invalid("ensemble has no exchangeable members"));
    }
    let ens_mean_norm = norm(ens.iter().sum::<f64>() / ens.len() as f64);

    let normalized: Vec<f64> = case.ensemble.members().map(norm).collect();
    let mean_all = normalized.iter().sum::<f64>() / k;
    let ens_var = normalized.iter().map(|v| (v - mean_all).powi(2)).sum::<f64>() / (k - 1.0);

    let (mut n1, mut n2, mut n3) = (0usize, 0usize, 0usize);
    for v in case.ensemble.members() {
        if v <= config.t1 {
            n1 += 1;
        } else if v <= config.t2 {
            n2 += 1;
        }
        if v > config.t3 {
            n3 += 1;
        }
    }

    let aux_norm = if config.include_aux {
        let aux = case.aux_forecast.ok_or_else(|| {
            Error::MissingCovariate(format!(
                "auxiliary forecast absent for {} {} +{}h",
                case.station_id,
                crate::domain::format_time(&case.init_time),
                case.lead_time_h
            ))
        })?;
        Some(norm(aux))
    } else {
        None
    };

    let (beta1, beta2) = annual_basis(case.init_time.ordinal())?;
    Ok(FeatureVector {
        ctrl_norm: norm(case.ensemble.control),
        ens_mean_norm,
        aux_norm,
        ens_var,
        p1: n1 as f64 / k,
        p2: n2 as f64 / k,
        p3: n3 as f64 / k,
        beta1,
        beta2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::EnsembleForecast;
    use chrono::{TimeZone, Utc};
    use proptest::prelude::*;

    fn case(control: f64, ens: Vec<f64>, aux: Option<f64>) -> ForecastCase {
        ForecastCase {
            station_id: "s".into(),
            init_time: Utc.with_ymd_and_hms(2021, 4, 1, 0, 0, 0).unwrap(),
            lead_time_h: 6,
            ensemble: EnsembleForecast::new(control, ens).unwrap(),
            aux_forecast: aux,
            observation: None,
        }
    }

    #[test]
    fn basis_values() {
        let (s, c) = annual_basis(365).unwrap();
        assert!(s.abs() < 1e-12 && (c - 1.0).abs() < 1e-12);
        let (s, c) = annual_basis(91).unwrap();
        let angle = 2.0 * std::f64::consts::PI * 91.0 / 365.0;
        assert_eq!((s, c), (angle.sin(), angle.cos()));
        // quarter period falls between d = 91 and d = 92
        assert!((s - 0.999991).abs() < 1e-6 && (c - 0.004304).abs() < 1e-6);
        let (s, _) = annual_basis(366).unwrap();
        assert_eq!(s, (2.0 * std::f64::consts::PI * 366.0 / 365.0).sin());
        assert!(annual_basis(0).is_err());
        assert!(annual_basis(367).is_err());
    }

    #[test]
    fn constant_top_ensemble() {
        let f = build_features(&case(70_000.0, vec![70_000.0; 50], Some(70_000.0)), &FeatureConfig::with_aux(true)).unwrap();
        assert_eq!(f.ctrl_norm, 1.0);
        assert_eq!(f.ens_mean_norm, 1.0);
        assert_eq!(f.aux_norm, Some(1.0));
        assert_eq!(f.ens_var, 0.0);
        assert_eq!((f.p1, f.p2, f.p3), (0.0, 0.0, 1.0));
        assert_eq!(f.to_vec().len(), 9);
    }

    #[test]
    fn low_ensemble_bands() {
        let f = build_features(&case(500.0, vec![500.0; 50], None), &FeatureConfig::default()).unwrap();
        assert_eq!((f.p1, f.p2, f.p3), (1.0, 0.0, 0.0));
        assert_eq!(f.aux_norm, None);
        assert_eq!(f.to_vec().len(), 8);
    }

    #[test]
    fn alternating_ensemble() {
        let ens: Vec<f64> = (0..50).map(|i| if i % 2 == 0 { 0.0 } else { 70_000.0 }).collect();
        let f = build_features(&case(35_000.0, ens, None), &FeatureConfig::default()).unwrap();
        assert_eq!(f.ens_mean_norm, 0.5);
        assert_eq!(f.ctrl_norm, 0.5);
        assert!((f.p1 - 25.0 / 51.0).abs() < 1e-15);
        // the 35000 m control is above the upper threshold too
        assert!((f.p3 - 26.0 / 51.0).abs() < 1e-15);
        assert_eq!(f.p2, 0.0);
        // 25 zeros, 25 ones and one 0.5: mean 0.5, squared deviations 50 * 0.25.
        assert!((f.ens_var - 12.5 / 50.0).abs() < 1e-15);
    }

    #[test]
    fn band_boundaries() {
        let cfg = FeatureConfig::default();
        let mut ens = vec![1000.0; 10];
        ens.extend(vec![2000.0; 10]);
        ens.extend(vec![30_000.0; 10]);
        ens.extend(vec![30_001.0; 20]);
        let f = build_features(&case(1000.1, ens, None), &cfg).unwrap();
        assert!((f.p1 - 10.0 / 51.0).abs() < 1e-15);
        assert!((f.p2 - 11.0 / 51.0).abs() < 1e-15);
        assert!((f.p3 - 20.0 / 51.0).abs() < 1e-15);
    }

    #[test]
    fn missing_aux_rejected() {
        let err = build_features(&case(500.0, vec![500.0; 50], None), &FeatureConfig::with_aux(true));
        assert!(matches!(err, Err(Error::MissingCovariate(_))));
    }

    #[test]
    fn thresholds_validated() {
        assert!(FeatureConfig::default().validate().is_ok());
        let bad = FeatureConfig { t2: 500.0, ..FeatureConfig::default() };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn invariants(values in proptest::collection::vec(0.0f64..90_000.0, 51), shift in 0usize..50) {
            let cfg = FeatureConfig::default();
            let f = build_features(&case(values[0], values[1..].to_vec(), None), &cfg).unwrap();
            prop_assert!(f.p1 + f.p2 <= 1.0 + 1e-15);
            prop_assert!(f.p1 + f.p2 + f.p3 <= 1.0 + 1e-15);
            prop_assert!(f.ens_var >= 0.0);
            prop_assert!((f.beta1.powi(2) + f.beta2.powi(2) - 1.0).abs() < 1e-12);
            for v in [f.ctrl_norm, f.ens_mean_norm, f.p1, f.p2, f.p3] {
                prop_assert!((0.0..=1.0).contains(&v));
            }

            // exchangeable members are unordered
            let mut rotated = values[1..].to_vec();
            rotated.rotate_left(shift);
            let g = build_features(&case(values[0], rotated, None), &cfg).unwrap();
            prop_assert!((f.ens_mean_norm - g.ens_mean_norm).abs() < 1e-12);
            prop_assert!((f.ens_var - g.ens_var).abs() < 1e-12);
            prop_assert_eq!((f.p1, f.p2, f.p3), (g.p1, g.p2, g.p3));
        }

        #[test]
        fn scale_consistent(values in proptest::collection::vec(0.0f64..70_000.0, 51), c in 0.1f64..10.0) {
            let cfg = FeatureConfig::default();
            let scaled_cfg = FeatureConfig { norm_denominator: cfg.norm_denominator * c, ..cfg.clone() };
            let f = build_features(&case(values[0], values[1..].to_vec(), None), &cfg).unwrap();
            let scaled: Vec<f64> = values.iter().map(|v| v * c).collect();
            let g = build_features(&case(scaled[0], scaled[1..].to_vec(), None), &scaled_cfg).unwrap();
            prop_assert!((f.ctrl_norm - g.ctrl_norm).abs() < 1e-12);
            prop_assert!((f.ens_mean_norm - g.ens_mean_norm).abs() < 1e-12);
            prop_assert!((f.ens_var - g.ens_var).abs() < 1e-12);
        }
    }
}
