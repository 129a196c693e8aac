//! Box-constrained limited-memory BFGS with a projected backtracking line
//! search, plus a central-difference gradient checker.
//!
//! The search direction comes from the usual two-loop recursion restricted to
//! the free variables (those not pinned at a bound by the gradient). Each
//! trial point is projected back onto the box and accepted only under
//! sufficient decrease, so accepted iterates are feasible and monotone.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ARMIJO_C1: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;
const MAX_BACKTRACKS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptConfig {
    pub max_iters: usize,
    /// Tolerance on the ∞-norm of the projected gradient.
    pub grad_tol: f64,
    /// Stop when `(f_k − f_{k+1}) / max(|f_k|, |f_{k+1}|, 1)` falls below this.
    pub rel_obj_tol: f64,
    /// Number of stored curvature pairs.
    pub memory: usize,
    /// Per-variable `[lo, hi]`; `None` means unbounded.
    #[serde(default)]
    pub bounds: Option<Vec<(f64, f64)>>,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            max_iters: 1000,
            grad_tol: 1e-5,
            rel_obj_tol: 1e-9,
            memory: 10,
            bounds: None,
        }
    }
}

impl OptConfig {
    pub fn with_bounds(mut self, bounds: Vec<(f64, f64)>) -> Self {
        self.bounds = Some(bounds);
        self
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.max_iters == 0 || self.memory == 0 {
            return Err(Error::invalid("max_iters and memory must be at least 1"));
        }
        if !(self.grad_tol > 0.0 && self.rel_obj_tol > 0.0) {
            return Err(Error::invalid("tolerances must be positive"));
        }
        if let Some(b) = &self.bounds {
            if b.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: b.len() });
            }
            if b.iter().any(|(lo, hi)| !(lo < hi)) {
                return Err(Error::invalid("every bound needs lo < hi"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GradientTol,
    ObjectiveTol,
    MaxIters,
    LineSearchFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptResult {
    pub x_final: Vec<f64>,
    pub f_final: f64,
    pub f_initial: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub reason: StopReason,
}

fn project(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (xi, (lo, hi)) in x.iter_mut().zip(bounds) {
        *xi = xi.clamp(*lo, *hi);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f` from `x0`. `f` returns the objective and its gradient; a
/// non-finite objective at a trial point is treated as a rejected step.
pub fn minimize<F>(mut f: F, x0: &[f64], config: &OptConfig) -> Result<OptResult>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    config.validate(n)?;
    let bounds = config
        .bounds
        .clone()
        .unwrap_or_else(|| vec![(f64::NEG_INFINITY, f64::INFINITY); n]);
    if x0.iter().zip(&bounds).any(|(x, (lo, hi))| !(x >= lo && x <= hi)) {
        return Err(Error::invalid("x0 lies outside the bounds"));
    }

    let mut x = x0.to_vec();
    let (mut fx, mut g) = f(&x);
    let mut evaluations = 1;
    if !fx.is_finite() || g.len() != n {
        return Err(Error::Numerical(format!("objective at x0 is {fx}")));
    }
    let f_initial = fx;
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(config.memory);

    let finish = |x: Vec<f64>, fx: f64, it: usize, ev: usize, reason: StopReason| OptResult {
        x_final: x,
        f_final: fx,
        f_initial,
        iterations: it,
        evaluations: ev,
        converged: matches!(reason, StopReason::GradientTol | StopReason::ObjectiveTol),
        reason,
    };

    for iter in 0..config.max_iters {
        let pg_norm = x
            .iter()
            .zip(&g)
            .zip(&bounds)
            .map(|((xi, gi), (lo, hi))| ((xi - gi).clamp(*lo, *hi) - xi).abs())
            .fold(0.0, f64::max);
        if pg_norm < config.grad_tol {
            return Ok(finish(x, fx, iter, evaluations, StopReason::GradientTol));
        }

        let active: Vec<bool> = x
            .iter()
            .zip(&g)
            .zip(&bounds)
            .map(|((xi, gi), (lo, hi))| (*xi <= *lo && *gi > 0.0) || (*xi >= *hi && *gi < 0.0))
            .collect();
        let gf: Vec<f64> = g
            .iter()
            .zip(&active)
            .map(|(gi, a)| if *a { 0.0 } else { *gi })
            .collect();

        let mut accepted = None;
        for attempt in 0..2 {
            let d = if mem.is_empty() {
                let gnorm = dot(&gf, &gf).sqrt();
                let scale = if gnorm > 1.0 { 1.0 / gnorm } else { 1.0 };
                gf.iter().map(|v| -v * scale).collect()
            } else {
                two_loop(&gf, &mem, &active)
            };
            if dot(&d, &gf) >= 0.0 {
                mem.clear();
                if attempt == 0 {
                    continue;
                }
                break;
            }
            if let Some(step) = line_search(&mut f, &x, fx, &g, &d, &bounds, &mut evaluations) {
                accepted = Some(step);
                break;
            }
            if mem.is_empty() {
                break;
            }
            mem.clear();
        }

        let Some((x_new, f_new, g_new)) = accepted else {
            return Ok(finish(x, fx, iter, evaluations, StopReason::LineSearchFailure));
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * dot(&y, &y).max(f64::MIN_POSITIVE) {
            if mem.len() == config.memory {
                mem.pop_front();
            }
            mem.push_back((s, y, 1.0 / sy));
        }

        let rel = (fx - f_new) / fx.abs().max(f_new.abs()).max(1.0);
        x = x_new;
        fx = f_new;
        g = g_new;
        if rel <= config.rel_obj_tol {
            return Ok(finish(x, fx, iter + 1, evaluations, StopReason::ObjectiveTol));
        }
    }
    Ok(finish(x, fx, config.max_iters, evaluations, StopReason::MaxIters))
}

fn two_loop(g: &[f64], mem: &VecDeque<(Vec<f64>, Vec<f64>, f64)>, active: &[bool]) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = vec![0.0; mem.len()];
    for (k, (s, y, rho)) in mem.iter().enumerate().rev() {
        let a = rho * dot(s, &q);
        alphas[k] = a;
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
    }
    let (s, y, _) = mem.back().expect("non-empty memory");
    let gamma = dot(s, y) / dot(y, y);
    for qi in q.iter_mut() {
        *qi *= gamma;
    }
    for (k, (s, y, rho)) in mem.iter().enumerate() {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (alphas[k] - b) * si;
        }
    }
    q.iter()
        .zip(active)
        .map(|(v, a)| if *a { 0.0 } else { -v })
        .collect()
}

fn line_search<F>(
    f: &mut F,
    x: &[f64],
    fx: f64,
    g: &[f64],
    d: &[f64],
    bounds: &[(f64, f64)],
    evaluations: &mut usize,
) -> Option<(Vec<f64>, f64, Vec<f64>)>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let mut t = 1.0;
    for _ in 0..MAX_BACKTRACKS {
        let mut xt: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + t * di).collect();
        project(&mut xt, bounds);
        if xt.iter().zip(x).all(|(a, b)| a == b) {
            return None;
        }
        let step: Vec<f64> = xt.iter().zip(x).map(|(a, b)| a - b).collect();
        let slope = dot(g, &step).min(0.0);
        let (ft, gt) = f(&xt);
        *evaluations += 1;
        if ft.is_finite() && gt.iter().all(|v| v.is_finite()) && ft <= fx + ARMIJO_C1 * slope && ft <= fx {
            return Some((xt, ft, gt));
        }
        t *= BACKTRACK;
    }
    None
}

/// Largest per-coordinate relative discrepancy between the analytic gradient
/// and central differences, `|a − n| / max(1e-12, |a| + |n|)`.
pub fn check_gradient<F>(mut f: F, x: &[f64], eps: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (f0, analytic) = f(x);
    if !f0.is_finite() || analytic.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite objective or gradient".into()));
    }
    let mut worst: f64 = 0.0;
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + eps;
        let (fp, _) = f(&xp);
        xp[i] = x[i] - eps;
        let (fm, _) = f(&xp);
        xp[i] = x[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Numerical(format!("non-finite objective near coordinate {i}")));
        }
        let numeric = (fp - fm) / (2.0 * eps);
        let err = (analytic[i] - numeric).abs() / (analytic[i].abs() + numeric.abs()).max(1e-12);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bowl(x: &[f64]) -> (f64, Vec<f64>) {
        (
            x.iter().map(|v| (v - 3.0).powi(2)).sum(),
            x.iter().map(|v| 2.0 * (v - 3.0)).collect(),
        )
    }

    fn rosenbrock(x: &[f64]) -> (f64, Vec<f64>) {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        (f, g)
    }

    #[test]
    fn quadratic_bowl_unconstrained_box() {
        let cfg = OptConfig::default().with_bounds(vec![(-10.0, 10.0); 4]);
        let r = minimize(bowl, &[0.0; 4], &cfg).unwrap();
        assert_eq!(r.reason, StopReason::GradientTol);
        assert!(r.x_final.iter().all(|v| (v - 3.0).abs() < 1e-6));
    }

    #[test]
    fn quadratic_bowl_active_bound() {
        let cfg = OptConfig::default().with_bounds(vec![(-10.0, 2.0); 3]);
        let r = minimize(bowl, &[0.0; 3], &cfg).unwrap();
        assert!(r.converged);
        assert!(r.x_final.iter().all(|v| (v - 2.0).abs() < 1e-12));
    }

    #[test]
    fn rosenbrock_from_classic_start() {
        // Known minimizer (1, 1) with f = 0 by direct substitution.
        assert_eq!(rosenbrock(&[1.0, 1.0]).0, 0.0);
        let cfg = OptConfig {
            max_iters: 200,
            rel_obj_tol: 1e-15,
            grad_tol: 1e-8,
            ..OptConfig::default()
        };
        let r = minimize(rosenbrock, &[-1.2, 1.0], &cfg).unwrap();
        assert!(r.f_final < 1e-8, "f = {} after {} iters", r.f_final, r.iterations);
        assert!(r.iterations <= 200);
    }

    #[test]
    fn iterates_are_monotone_feasible_and_deterministic() {
        let bounds = vec![(-0.5, 0.8), (-2.0, 2.0)];
        let cfg = OptConfig::default().with_bounds(bounds.clone());
        let mut trace = Vec::new();
        let r1 = minimize(
            |x| {
                trace.push(x.to_vec());
                rosenbrock(x)
            },
            &[0.0, 0.0],
            &cfg,
        )
        .unwrap();
        assert!(trace.iter().all(|x| x.iter().zip(&bounds).all(|(v, (lo, hi))| v >= lo && v <= hi)));
        assert!(r1.f_final <= r1.f_initial);
        assert!((r1.x_final[0] - 0.8).abs() < 1e-9);
        let r2 = minimize(rosenbrock, &[0.0, 0.0], &cfg).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn rejects_bad_start() {
        let cfg = OptConfig::default().with_bounds(vec![(0.0, 1.0)]);
        assert!(minimize(bowl, &[2.0], &cfg).is_err());
        assert!(minimize(|_| (f64::NAN, vec![0.0]), &[0.5], &cfg).is_err());
        let bad = OptConfig::default().with_bounds(vec![(1.0, 1.0)]);
        assert!(minimize(bowl, &[1.0], &bad).is_err());
    }

    #[test]
    fn line_search_failure_is_reported() {
        // Gradient points the wrong way: no descent is possible along -g.
        let r = minimize(|x| (x[0] * x[0], vec![-2.0 * x[0] - 1.0]), &[1.0], &OptConfig::default()).unwrap();
        assert_eq!(r.reason, StopReason::LineSearchFailure);
        assert!(!r.converged);
        assert_eq!(r.x_final, vec![1.0]);
    }

    #[test]
    fn gradient_checker() {
        let err = check_gradient(|x| (x[0] * x[0], vec![2.0 * x[0]]), &[1.5], 1e-5).unwrap();
        assert!(err < 1e-8);
        let err = check_gradient(|x| (x[0] * x[0], vec![4.0 * x[0]]), &[1.5], 1e-5).unwrap();
        assert!((err - 1.0 / 3.0).abs() < 1e-6);
        assert!(check_gradient(|_| (f64::NAN, vec![0.0]), &[0.0], 1e-5).is_err());
    }
}
