//! Proportional odds (cumulative logit) model.
//!
//! `P(Y <= c_j | x) = logistic(alpha_j - x'beta)` over the categories
//! `c_1 < ... < c_C` spanned by the training labels. With this sign a
//! positive coefficient shifts mass toward higher visibility, so the
//! nonnegativity mask on forecast-valued inputs reads "higher forecast,
//! higher predicted visibility".
//!
//! Fitting is unconstrained in a transformed space: the first cutpoint is
//! free, later ones add `exp(theta) + MIN_GAP`, and masked coefficients are
//! squares of free parameters.

use serde::{Deserialize, Serialize};

use super::optim::{minimize_lbfgs, LbfgsOptions};
use super::{check_training_data, FitStatus, Pmf, TrainOptions};
use crate::domain::N_CATEGORIES;
use crate::{Error, Result};

/// Smallest spacing between consecutive cutpoints.
const MIN_GAP: f64 = 1e-10;
/// Starting value of the free parameter behind each masked coefficient.
/// Zero is a stationary point of the square map, so start away from it.
const MASKED_START: f64 = 0.1;
/// Lower bound on a warm-started masked parameter, for the same reason.
const WARM_MASKED_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolrModel {
    /// Scale indices of the retained categories, contiguous and ascending.
    pub category_map: Vec<usize>,
    /// `category_map.len() - 1` strictly increasing cutpoints.
    pub cutpoints: Vec<f64>,
    pub coefficients: Vec<f64>,
    pub constraint_mask: Vec<bool>,
    pub n_categories: usize,
    pub status: FitStatus,
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// `(softplus(t), sigmoid(t))` from a single exponential.
fn softplus_sigmoid(t: f64) -> (f64, f64) {
    let e = (-t.abs()).exp();
    let sp = t.max(0.0) + e.ln_1p();
    let sg = if t >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
    (sp, sg)
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Log-probability of each retained category given the linear predictor.
fn log_probs(cutpoints: &[f64], eta: f64) -> Vec<f64> {
    let c = cutpoints.len() + 1;
    (0..c)
        .map(|j| {
            if j == 0 {
                -softplus(eta - cutpoints[0])
            } else if j == c - 1 {
                -softplus(cutpoints[j - 1] - eta)
            } else {
                let gap = cutpoints[j] - cutpoints[j - 1];
                if gap <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    -softplus(eta - cutpoints[j]) - softplus(cutpoints[j - 1] - eta)
                        + (-(-gap).exp_m1()).ln()
                }
            }
        })
        .collect()
}

struct Problem<'a> {
    x: &'a [Vec<f64>],
    /// Labels relative to the lowest retained category.
    y: Vec<usize>,
    mask: &'a [bool],
    n_classes: usize,
}

impl Problem<'_> {
    fn n_cut(&self) -> usize {
        self.n_classes - 1
    }

    fn unpack(&self, theta: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n_cut = self.n_cut();
        let mut alpha = Vec::with_capacity(n_cut);
        let mut gaps = vec![0.0; n_cut];
        alpha.push(theta[0]);
        for j in 1..n_cut {
            gaps[j] = theta[j].exp() + MIN_GAP;
            alpha.push(alpha[j - 1] + gaps[j]);
        }
        let beta = theta[n_cut..]
            .iter()
            .zip(self.mask)
            .map(|(&g, &m)| if m { g * g } else { g })
            .collect();
        (alpha, gaps, beta)
    }

    /// Mean negative log-likelihood and its gradient in the free parameters.
    fn evaluate(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let n_cut = self.n_cut();
        let (alpha, gaps, beta) = self.unpack(theta);
        // per-gap terms shared by every interior observation
        let gap_log: Vec<f64> = gaps.iter().map(|&d| if d > 0.0 { (-(-d).exp_m1()).ln() } else { 0.0 }).collect();
        let gap_inv: Vec<f64> = gaps.iter().map(|&d| if d > 0.0 { 1.0 / d.exp_m1() } else { 0.0 }).collect();

        let mut g_alpha = vec![0.0; n_cut];
        let mut g_beta = vec![0.0; beta.len()];
        let mut nll = 0.0;
        for (row, &j) in self.x.iter().zip(&self.y) {
            let eta: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let (mut da, mut db) = (0.0, 0.0);
            if j < n_cut {
                let (sp, sg) = softplus_sigmoid(eta - alpha[j]);
                nll += sp;
                da = -sg;
            }
            if j > 0 {
                let (sp, sg) = softplus_sigmoid(alpha[j - 1] - eta);
                nll += sp;
                db = sg;
            }
            if j > 0 && j < n_cut {
                nll -= gap_log[j];
                da -= gap_inv[j];
                db += gap_inv[j];
            }
            if j < n_cut {
                g_alpha[j] += da;
            }
            if j > 0 {
                g_alpha[j - 1] += db;
            }
            let d_eta = -(da + db);
            g_beta.iter_mut().zip(row).for_each(|(g, v)| *g += d_eta * v);
        }

        let n = self.y.len() as f64;
        let mut suffix = 0.0;
        for j in (0..n_cut).rev() {
            suffix += g_alpha[j];
            grad[j] = if j == 0 { suffix } else { suffix * (gaps[j] - MIN_GAP) } / n;
        }
        for (m, gb) in g_beta.iter().enumerate() {
            let t = theta[n_cut + m];
            grad[n_cut + m] = if self.mask[m] { 2.0 * t * gb } else { *gb } / n;
        }
        nll / n
    }

    fn start(&self) -> Vec<f64> {
        let mut counts = vec![0.5; self.n_classes];
        for &j in &self.y {
            counts[j] += 1.0;
        }
        let total: f64 = counts.iter().sum();
        let mut theta = Vec::with_capacity(self.n_cut() + self.mask.len());
        let mut cum = 0.0;
        let mut prev = 0.0;
        for (j, c) in counts[..self.n_cut()].iter().enumerate() {
            cum += c;
            let p = cum / total;
            let alpha = (p / (1.0 - p)).ln();
            theta.push(if j == 0 { alpha } else { (alpha - prev - MIN_GAP).max(1e-8).ln() });
            prev = alpha;
        }
        theta.extend(self.mask.iter().map(|&m| if m { MASKED_START } else { 0.0 }));
        theta
    }

    /// Free parameters reproducing `model`, when it spans the same
    /// categories and features.
    fn start_from(&self, model: &PolrModel, lo: usize) -> Option<Vec<f64>> {
        if model.category_map.first() != Some(&lo)
            || model.category_map.len() != self.n_classes
            || model.constraint_mask != self.mask
        {
            return None;
        }
        let mut theta = Vec::with_capacity(self.n_cut() + self.mask.len());
        theta.push(model.cutpoints[0]);
        for w in model.cutpoints.windows(2) {
            theta.push((w[1] - w[0] - MIN_GAP).max(f64::MIN_POSITIVE).ln());
        }
        for (&b, &m) in model.coefficients.iter().zip(self.mask) {
            theta.push(if m { b.max(0.0).sqrt().max(WARM_MASKED_FLOOR) } else { b });
        }
        theta.iter().all(|t| t.is_finite()).then_some(theta)
    }
}

/// Maximum-likelihood fit. Categories below the smallest or above the
/// largest training label are dropped and predicted with probability 0.
pub fn polr_fit(x: &[Vec<f64>], labels: &[usize], mask: &[bool], opts: &TrainOptions) -> Result<PolrModel> {
    polr_fit_traced(x, labels, mask, opts, None).map(|(m, _)| m)
}

/// [`polr_fit`] started from an earlier model's parameters, such as the
/// previous day's fit on an overlapping window. Falls back to the default
/// start when the retained categories or features differ.
pub fn polr_fit_warm(
    x: &[Vec<f64>],
    labels: &[usize],
    mask: &[bool],
    opts: &TrainOptions,
    previous: &PolrModel,
) -> Result<PolrModel> {
    polr_fit_traced(x, labels, mask, opts, Some(previous)).map(|(m, _)| m)
}

/// [`polr_fit`] that also returns the objective after every accepted step.
pub fn polr_fit_traced(
    x: &[Vec<f64>],
    labels: &[usize],
    mask: &[bool],
    opts: &TrainOptions,
    previous: Option<&PolrModel>,
) -> Result<(PolrModel, Vec<f64>)> {
    opts.validate()?;
    let dim = check_training_data(x, labels, N_CATEGORIES)?;
    if mask.len() != dim {
        return Err(Error::invalid(format!(
            "constraint mask has {} entries for {dim} features",
            mask.len()
        )));
    }
    let lo = *labels.iter().min().expect("nonempty");
    let hi = *labels.iter().max().expect("nonempty");
    let problem = Problem {
        x,
        y: labels.iter().map(|&k| k - lo).collect(),
        mask,
        n_classes: hi - lo + 1,
    };

    let lbfgs = LbfgsOptions {
        max_iter: opts.max_iter,
        ftol: opts.tolerance,
        ..LbfgsOptions::default()
    };
    let start = previous.and_then(|m| problem.start_from(m, lo)).unwrap_or_else(|| problem.start());
    let min = minimize_lbfgs(|t, g| problem.evaluate(t, g), start, &lbfgs)?;
    let (cutpoints, _, coefficients) = problem.unpack(&min.x);
    if cutpoints.windows(2).any(|w| !(w[0] < w[1])) || cutpoints.iter().any(|a| !a.is_finite()) {
        return Err(Error::Numeric("POLR cutpoints lost strict ordering".into()));
    }
    let model = PolrModel {
        category_map: (lo..=hi).collect(),
        cutpoints,
        coefficients,
        constraint_mask: mask.to_vec(),
        n_categories: N_CATEGORIES,
        status: FitStatus {
            converged: min.converged,
            iterations: min.iterations,
            objective: min.value,
            n_samples: labels.len(),
        },
    };
    Ok((model, min.trace))
}

impl PolrModel {
    fn eta(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.coefficients.len() {
            return Err(Error::invalid(format!(
                "POLR expects {} features, got {}",
                self.coefficients.len(),
                x.len()
            )));
        }
        Ok(x.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum())
    }

    /// `P(Y <= c_j | x)` for each retained category.
    pub fn cumulative(&self, x: &[f64]) -> Result<Vec<f64>> {
        let eta = self.eta(x)?;
        let mut out: Vec<f64> = self.cutpoints.iter().map(|a| sigmoid(a - eta)).collect();
        out.push(1.0);
        Ok(out)
    }

    /// Mean negative log-likelihood of labelled data under the model.
    pub fn neg_log_likelihood(&self, x: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
        let lo = self.category_map[0];
        let mut total = 0.0;
        for (row, &k) in x.iter().zip(labels) {
            let lp = log_probs(&self.cutpoints, self.eta(row)?);
            total -= match k.checked_sub(lo).and_then(|j| lp.get(j)) {
                Some(&v) => v,
                None => f64::NEG_INFINITY,
            };
        }
        Ok(total / labels.len() as f64)
    }
}

pub fn polr_predict(model: &PolrModel, x: &[f64]) -> Result<Pmf> {
    let eta = model.eta(x)?;
    let mut probs = vec![0.0; model.n_categories];
    for (j, lp) in log_probs(&model.cutpoints, eta).into_iter().enumerate() {
        probs[model.category_map[j]] = lp.exp();
    }
    Pmf::from_weights(probs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(category_map: Vec<usize>, cutpoints: Vec<f64>, coefficients: Vec<f64>) -> PolrModel {
        let m = coefficients.len();
        PolrModel {
            category_map,
            cutpoints,
            coefficients,
            constraint_mask: vec![false; m],
            n_categories: N_CATEGORIES,
            status: FitStatus { converged: true, iterations: 0, objective: 0.0, n_samples: 0 },
        }
    }

    #[test]
    fn single_cutpoint_half() {
        let m = model(vec![0, 1], vec![0.0], vec![0.0]);
        assert_eq!(m.cumulative(&[3.0]).unwrap()[0], 0.5);
    }

    #[test]
    fn three_category_probabilities() {
        let m = model(vec![5, 6, 7], vec![-1.0, 1.0], vec![0.0]);
        let p = polr_predict(&m, &[0.7]).unwrap();
        let l = |t: f64| 1.0 / (1.0 + (-t).exp());
        assert!((p.prob(5) - l(-1.0)).abs() < 1e-15);
        assert!((p.prob(6) - (l(1.0) - l(-1.0))).abs() < 1e-15);
        assert!((p.prob(7) - (1.0 - l(1.0))).abs() < 1e-15);
        assert!((p.prob(5) - 0.26894).abs() < 1e-5 && (p.prob(6) - 0.46212).abs() < 1e-5);
        assert_eq!(p.probs().iter().filter(|&&v| v > 0.0).count(), 3);
        // beta = 0: independent of x
        assert_eq!(polr_predict(&m, &[-4.0]).unwrap(), p);
    }

    #[test]
    fn dimension_mismatch() {
        let m = model(vec![0, 1], vec![0.0], vec![0.0, 1.0]);
        assert!(polr_predict(&m, &[1.0]).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()]).collect();
        let labels: Vec<usize> = (0..30).map(|i| 3 + (i * 7) % 5).collect();
        let mask = [true, false];
        let p = Problem { x: &x, y: labels.iter().map(|k| k - 3).collect(), mask: &mask, n_classes: 5 };
        let theta = vec![-1.0, -0.3, 0.2, 0.4, 0.5, -0.7];
        let mut g = vec![0.0; theta.len()];
        p.evaluate(&theta, &mut g);
        let mut scratch = vec![0.0; theta.len()];
        for i in 0..theta.len() {
            let h = 1e-6;
            let mut tp = theta.clone();
            tp[i] += h;
            let mut tm = theta.clone();
            tm[i] -= h;
            let fd = (p.evaluate(&tp, &mut scratch) - p.evaluate(&tm, &mut scratch)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-7, "param {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn objective_trace_decreases() {
        let x: Vec<Vec<f64>> = (0..200).map(|i| vec![(i % 17) as f64 / 17.0, ((i * 5) % 11) as f64 / 11.0]).collect();
        let labels: Vec<usize> = x.iter().enumerate().map(|(i, r)| 20 + ((r[0] * 8.0) as usize + i % 3)).collect();
        let (m, trace) = polr_fit_traced(&x, &labels, &[true, false], &TrainOptions::polr(), None).unwrap();
        assert!(trace.windows(2).all(|w| w[1] < w[0]));
        assert!(m.coefficients[0] > 0.0);
        assert!(m.status.converged);
    }

    #[test]
    fn intercept_absorption() {
        // a constant feature trades off exactly against the cutpoints
        let base = model(vec![2, 3, 4], vec![-0.5, 0.8], vec![0.6, 0.0]);
        let shift = 1.7;
        let shifted = model(vec![2, 3, 4], vec![-0.5 + shift * 0.6, 0.8 + shift * 0.6], vec![0.6, 0.0]);
        let a = polr_predict(&base, &[0.3, 1.0]).unwrap();
        let b = polr_predict(&shifted, &[0.3 + shift, 1.0]).unwrap();
        for (p, q) in a.probs().iter().zip(b.probs()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn warm_start_reaches_same_optimum() {
        let x: Vec<Vec<f64>> = (0..300).map(|i| vec![(i % 23) as f64 / 23.0, ((i * 7) % 13) as f64 / 13.0]).collect();
        let labels: Vec<usize> = x.iter().enumerate().map(|(i, r)| 10 + ((r[0] * 6.0) as usize + i % 4)).collect();
        let opts = TrainOptions::polr();
        let cold = polr_fit(&x, &labels, &[true, false], &opts).unwrap();
        let prev = polr_fit(&x[10..], &labels[10..], &[true, false], &opts).unwrap();
        let warm = polr_fit_warm(&x, &labels, &[true, false], &opts, &prev).unwrap();
        assert!((warm.status.objective - cold.status.objective).abs() < 1e-9);
        assert!(warm.status.iterations < cold.status.iterations);
        let p = polr_predict(&cold, &x[0]).unwrap();
        let q = polr_predict(&warm, &x[0]).unwrap();
        for (a, b) in p.probs().iter().zip(q.probs()) {
            assert!((a - b).abs() < 1e-4);
        }
        // a different category range falls back to the default start
        let narrow = polr_fit(&x[..50], &labels[..50].iter().map(|&l| l.min(12)).collect::<Vec<_>>(), &[true, false], &opts).unwrap();
        let fallback = polr_fit_warm(&x, &labels, &[true, false], &opts, &narrow).unwrap();
        assert_eq!(fallback, cold);
    }
}
