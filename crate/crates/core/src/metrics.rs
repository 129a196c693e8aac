//! Point and probabilistic accuracy metrics, rank correlation, and paired
//! significance tests.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};
use crate::predictive::PredictiveGaussian;

/// Central-interval levels reported by [`MetricReport`].
pub const COVERAGE_LEVELS: [f64; 3] = [0.95, 0.90, 0.68];
/// Largest sample for which the Spearman p-value is computed by exact
/// enumeration of all permutations.
pub const SPEARMAN_EXACT_MAX_N: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rmse: f64,
    pub nlpd: f64,
    /// Keyed by level formatted with two decimals, e.g. `"0.95"`.
    pub ci_coverage: BTreeMap<String, f64>,
    pub improvement_ratio: Option<f64>,
    pub noise_variance: f64,
    pub wall_time_sec: f64,
}

pub fn level_key(level: f64) -> String {
    format!("{level:.2}")
}

fn same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch { expected: a, found: b });
    }
    if a == 0 {
        return Err(Error::invalid("metric needs at least one point"));
    }
    Ok(())
}

pub fn rmse(pred: &[f64], y: &[f64]) -> Result<f64> {
    same_len(pred.len(), y.len())?;
    let sse: f64 = pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sse / y.len() as f64).sqrt())
}

fn check_variances(g: &[PredictiveGaussian]) -> Result<()> {
    match g.iter().position(|p| !(p.outcome_variance > 0.0)) {
        Some(i) => Err(Error::invalid(format!("non-positive predictive variance at point {i}"))),
        None => Ok(()),
    }
}

/// Average negative log predictive density under the outcome variance.
pub fn nlpd(g: &[PredictiveGaussian], y: &[f64]) -> Result<f64> {
    same_len(g.len(), y.len())?;
    check_variances(g)?;
    let total: f64 = g
        .iter()
        .zip(y)
        .map(|(p, t)| {
            let v = p.outcome_variance;
            0.5 * (2.0 * std::f64::consts::PI * v).ln() + (t - p.mean).powi(2) / (2.0 * v)
        })
        .sum();
    Ok(total / y.len() as f64)
}

/// Two-sided standard-normal quantile `z` with `P(|Z| ≤ z) = level`.
pub fn two_sided_z(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("coverage level must be in (0, 1), got {level}")));
    }
    Ok(Normal::standard().inverse_cdf(0.5 * (1.0 + level)))
}

pub fn ci_coverage(g: &[PredictiveGaussian], y: &[f64], level: f64) -> Result<f64> {
    same_len(g.len(), y.len())?;
    check_variances(g)?;
    let z = two_sided_z(level)?;
    let inside = g
        .iter()
        .zip(y)
        .filter(|(p, t)| (*t - p.mean).abs() <= z * p.outcome_variance.sqrt())
        .count();
    Ok(inside as f64 / y.len() as f64)
}

/// Fraction of points whose absolute error strictly decreases. Ties count as
/// not improved.
pub fn improvement_ratio(nn: &[f64], calibrated: &[f64], y: &[f64]) -> Result<f64> {
    same_len(nn.len(), y.len())?;
    same_len(calibrated.len(), y.len())?;
    let better = (0..y.len())
        .filter(|&i| (calibrated[i] - y[i]).abs() < (nn[i] - y[i]).abs())
        .count();
    Ok(better as f64 / y.len() as f64)
}

/// Ranks starting at 1, ties receive the average of their positions.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spearman {
    pub rho: f64,
    /// Two-sided p-value.
    pub p: f64,
}

/// Spearman rank correlation. The p-value is exact (full permutation null)
/// for `n ≤ 8`, otherwise from the t approximation with `n − 2` dof.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<Spearman> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { expected: a.len(), found: b.len() });
    }
    let n = a.len();
    if n < 3 {
        return Err(Error::invalid("spearman needs at least 3 points"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::invalid("spearman inputs must be finite"));
    }
    if a.iter().all(|v| *v == a[0]) || b.iter().all(|v| *v == b[0]) {
        return Err(Error::invalid("spearman correlation is undefined for a constant input"));
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let rho = pearson(&ra, &rb);
    let p = if n <= SPEARMAN_EXACT_MAX_N {
        exact_permutation_p(&ra, &rb, rho)
    } else if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * ((n as f64 - 2.0) / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, n as f64 - 2.0).expect("dof > 0");
        (2.0 * dist.sf(t.abs())).min(1.0)
    };
    Ok(Spearman { rho, p })
}

fn exact_permutation_p(ra: &[f64], rb: &[f64], rho: f64) -> f64 {
    let mut perm = rb.to_vec();
    let mut c = vec![0usize; perm.len()];
    let thresh = rho.abs() - 1e-12;
    let mut hits = u64::from(pearson(ra, &perm).abs() >= thresh);
    let mut total = 1u64;
    // Heap's algorithm.
    let mut i = 0;
    while i < perm.len() {
        if c[i] < i {
            perm.swap(if i % 2 == 0 { 0 } else { c[i] }, i);
            hits += u64::from(pearson(ra, &perm).abs() >= thresh);
            total += 1;
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    hits as f64 / total as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTests {
    pub t_statistic: f64,
    pub t_p: f64,
    /// `None` when every paired difference is zero.
    pub wilcoxon_p: Option<f64>,
}

/// Two-sided paired t-test and Wilcoxon signed-rank test (normal
/// approximation with continuity and tie correction, zero differences
/// dropped).
pub fn paired_tests(a: &[f64], b: &[f64]) -> Result<PairedTests> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { expected: a.len(), found: b.len() });
    }
    let n = a.len();
    if n < 5 {
        return Err(Error::invalid(format!("paired tests need at least 5 runs, got {n}")));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("paired tests need finite inputs"));
    }
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
    let (t_statistic, t_p) = if sd == 0.0 {
        if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (mean.signum() * f64::INFINITY, 0.0)
        }
    } else {
        let t = mean / (sd / nf.sqrt());
        let dist = StudentsT::new(0.0, 1.0, nf - 1.0).expect("dof > 0");
        (t, (2.0 * dist.sf(t.abs())).min(1.0))
    };
    Ok(PairedTests { t_statistic, t_p, wilcoxon_p: wilcoxon(&d) })
}

fn wilcoxon(d: &[f64]) -> Option<f64> {
    let nz: Vec<f64> = d.iter().copied().filter(|v| *v != 0.0).collect();
    if nz.is_empty() {
        return None;
    }
    let abs: Vec<f64> = nz.iter().map(|v| v.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = nz.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let m = nz.len() as f64;
    let mut sorted = abs.clone();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|v| **v == sorted[i]).count();
        let t = j as f64;
        tie_term += t * t * t - t;
        i += j;
    }
    let mean = m * (m + 1.0) / 4.0;
    let var = m * (m + 1.0) * (2.0 * m + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return Some(1.0);
    }
    let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
    Some((2.0 * Normal::standard().sf(z)).min(1.0))
}

/// Full metric set for one fitted model on one test set.
pub fn evaluate(
    g: &[PredictiveGaussian],
    y: &[f64],
    nn_pred: Option<&[f64]>,
    noise_variance: f64,
    wall_time_sec: f64,
) -> Result<MetricReport> {
    let means: Vec<f64> = g.iter().map(|p| p.mean).collect();
    let mut ci = BTreeMap::new();
    for level in COVERAGE_LEVELS {
        ci.insert(level_key(level), ci_coverage(g, y, level)?);
    }
    Ok(MetricReport {
        rmse: rmse(&means, y)?,
        nlpd: nlpd(g, y)?,
        ci_coverage: ci,
        improvement_ratio: nn_pred.map(|nn| improvement_ratio(nn, &means, y)).transpose()?,
        noise_variance,
        wall_time_sec,
    })
}
