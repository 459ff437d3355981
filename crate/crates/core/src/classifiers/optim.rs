//! Limited-memory BFGS with a backtracking Armijo line search.
//!
//! Every accepted step strictly decreases the objective, so the objective
//! trace is monotone.

use std::collections::VecDeque;

use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct LbfgsOptions {
    pub max_iter: usize,
    pub memory: usize,
    /// Stop after three consecutive steps with relative decrease below this.
    pub ftol: f64,
    /// Stop when the largest gradient component falls below this.
    pub gtol: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            memory: 10,
            ftol: 1e-13,
            gtol: 1e-9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each accepted step, starting with the initial value.
    pub trace: Vec<f64>,
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Minimizes `f`, which returns the objective and writes the gradient
/// into its second argument.
pub fn minimize_lbfgs<F>(mut f: F, x0: Vec<f64>, opts: &LbfgsOptions) -> Result<Minimum>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("objective is not finite at the starting point".into()));
    }
    let mut trace = vec![fx];
    if n == 0 {
        return Ok(Minimum { x, value: fx, iterations: 0, converged: true, trace });
    }

    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut small_steps = 0;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        if inf_norm(&g) <= opts.gtol {
            converged = true;
            break;
        }
        iterations += 1;

        // two-loop recursion
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &d);
            d.iter_mut().zip(y).for_each(|(di, yi)| *di -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|di| *di *= gamma);
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &d);
            d.iter_mut().zip(s).for_each(|(di, si)| *di += (a - b) * si);
        }
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            history.clear();
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
        }

        let mut step = if history.is_empty() {
            (1.0 / inf_norm(&d)).min(1.0)
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            x_new.iter_mut().zip(&x).zip(&d).for_each(|((xn, xi), di)| *xn = xi + step * di);
            let f_new = f(&x_new, &mut g_new);
            if f_new.is_finite() && f_new <= fx + ARMIJO_C1 * step * slope && f_new < fx {
                accepted = Some(f_new);
                break;
            }
            step *= 0.5;
        }
        let Some(f_new) = accepted else {
            if !history.is_empty() {
                history.clear();
                continue;
            }
            // no descent left at working precision
            converged = inf_norm(&g) <= 1e-5 * fx.abs().max(1.0);
            break;
        };
        if g_new.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite gradient".into()));
        }

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }

        let decrease = fx - f_new;
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        fx = f_new;
        trace.push(fx);

        if decrease <= opts.ftol * fx.abs().max(1.0) {
            small_steps += 1;
            if small_steps >= 3 {
                converged = true;
                break;
            }
        } else {
            small_steps = 0;
        }
    }
    if !converged && inf_norm(&g) <= opts.gtol {
        converged = true;
    }

    Ok(Minimum { x, value: fx, iterations, converged, trace })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64], g: &mut [f64]| {
            let (a, b) = (x[0], x[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        };
        let m = minimize_lbfgs(f, vec![-1.2, 1.0], &LbfgsOptions::default()).unwrap();
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6, "{:?}", m.x);
        assert!(m.trace.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn quadratic_exact() {
        let f = |x: &[f64], g: &mut [f64]| {
            let mut v = 0.0;
            for (i, xi) in x.iter().enumerate() {
                let c = (i + 1) as f64;
                g[i] = 2.0 * c * (xi - c);
                v += c * (xi - c).powi(2);
            }
            v
        };
        let m = minimize_lbfgs(f, vec![0.0; 5], &LbfgsOptions::default()).unwrap();
        for (i, xi) in m.x.iter().enumerate() {
            assert!((xi - (i + 1) as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn non_finite_start() {
        let f = |_: &[f64], _: &mut [f64]| f64::NAN;
        assert!(minimize_lbfgs(f, vec![0.0], &LbfgsOptions::default()).is_err());
    }
}
