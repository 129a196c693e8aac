//! Exact GP regression with the composite kernel: log marginal likelihood,
//! its gradient, hyperparameter fitting and the predictive distribution.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hyperopt::{minimize, OptConfig, StopReason};
use crate::kernels::{ActiveKernel, GpInputs, KernelParams, KernelSelector};
use crate::linalg::{cholesky_with_jitter, solve_lower_vec, JitteredCholesky};
use crate::predictive::PredictiveGaussian;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Outcome of a hyperparameter fit. Objective values are on the maximized
/// scale (log marginal likelihood or its lower bound).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub objective_init: f64,
    pub objective_final: f64,
    pub iterations: usize,
    pub converged: bool,
    pub reason: StopReason,
    pub warning: Option<String>,
}

impl FitReport {
    pub(crate) fn from_opt(r: &crate::hyperopt::OptResult) -> Self {
        let warning = (!r.converged).then(|| format!("optimizer stopped without converging: {:?}", r.reason));
        if let Some(w) = &warning {
            log::warn!("{w}");
        }
        Self {
            objective_init: -r.f_initial,
            objective_final: -r.f_final,
            iterations: r.iterations,
            converged: r.converged,
            reason: r.reason,
            warning,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExactGpModel {
    pub params: KernelParams,
    pub selector: KernelSelector,
    pub train: GpInputs,
    pub targets: Vec<f64>,
    /// `(K + σ_n² I)⁻¹ r`.
    pub alpha: DVector<f64>,
    /// Lower Cholesky factor of `K + σ_n² I` (plus any jitter).
    pub chol: DMatrix<f64>,
    pub jitter: f64,
    pub fit: Option<FitReport>,
}

fn validate(params: &KernelParams, sel: &KernelSelector, points: &GpInputs, targets: &[f64]) -> Result<()> {
    sel.validate()?;
    params.validate(points.dim())?;
    if points.is_empty() {
        return Err(Error::invalid("GP needs at least one training point"));
    }
    if targets.len() != points.len() {
        return Err(Error::LengthMismatch { expected: points.len(), found: targets.len() });
    }
    if targets.iter().any(|t| !t.is_finite()) {
        return Err(Error::invalid("targets must be finite"));
    }
    Ok(())
}

fn factorize(kern: &ActiveKernel, noise: f64, points: &GpInputs) -> Result<JitteredCholesky> {
    let mut k = kern.gram_sym(points);
    for i in 0..points.len() {
        k[(i, i)] += noise;
    }
    cholesky_with_jitter(&k, 0.0)
}

pub fn log_marginal_likelihood(
    params: &KernelParams,
    sel: &KernelSelector,
    points: &GpInputs,
    targets: &[f64],
) -> Result<f64> {
    validate(params, sel, points, targets)?;
    let kern = ActiveKernel::new(params, sel);
    let f = factorize(&kern, params.noise(), points)?;
    let r = DVector::from_column_slice(targets);
    let v = solve_lower_vec(&f.l(), &r);
    Ok(-0.5 * v.norm_squared() - 0.5 * f.log_det() - 0.5 * points.len() as f64 * LN_2PI)
}

/// LML and its gradient over `params.to_vec(sel)`.
pub fn lml_with_gradient(
    params: &KernelParams,
    sel: &KernelSelector,
    points: &GpInputs,
    targets: &[f64],
) -> Result<(f64, Vec<f64>)> {
    validate(params, sel, points, targets)?;
    let kern = ActiveKernel::new(params, sel);
    let noise = params.noise();
    let f = factorize(&kern, noise, points)?;
    let n = points.len();
    let r = DVector::from_column_slice(targets);
    let alpha = f.chol.solve(&r);
    let lml = -0.5 * r.dot(&alpha) - 0.5 * f.log_det() - 0.5 * n as f64 * LN_2PI;

    // W = ααᵀ − (K + σ²I)⁻¹ ; ∂LML/∂θ = ½ Σ W ⊙ ∂K/∂θ.
    let mut w = f.chol.inverse();
    w.neg_mut();
    w.ger(1.0, &alpha, &alpha, 1.0);
    let mut grad: Vec<f64> = kern
        .contract_param_gradients(points, points, &w)
        .into_iter()
        .map(|g| 0.5 * g)
        .collect();
    grad.push(0.5 * noise * w.trace());
    Ok((lml, grad))
}

pub fn lml_gradient(
    params: &KernelParams,
    sel: &KernelSelector,
    points: &GpInputs,
    targets: &[f64],
) -> Result<Vec<f64>> {
    lml_with_gradient(params, sel, points, targets).map(|(_, g)| g)
}

impl ExactGpModel {
    /// Conditions the GP on data at fixed hyperparameters.
    pub fn condition(params: &KernelParams, sel: &KernelSelector, points: &GpInputs, targets: &[f64]) -> Result<Self> {
        validate(params, sel, points, targets)?;
        let kern = ActiveKernel::new(params, sel);
        let f = factorize(&kern, params.noise(), points)?;
        let alpha = f.chol.solve(&DVector::from_column_slice(targets));
        Ok(Self {
            params: params.clone(),
            selector: *sel,
            train: points.clone(),
            targets: targets.to_vec(),
            alpha,
            chol: f.l(),
            jitter: f.jitter,
            fit: None,
        })
    }

    pub fn noise_variance(&self) -> f64 {
        self.params.noise()
    }

    pub fn predict(&self, x_star: &[f64], yhat_star: f64) -> Result<PredictiveGaussian> {
        if x_star.len() != self.train.dim() {
            return Err(Error::DimensionMismatch { expected: self.train.dim(), found: x_star.len() });
        }
        let kern = ActiveKernel::new(&self.params, &self.selector);
        let star = GpInputs::single(x_star, yhat_star);
        let k_star = kern.cross_vector(&self.train, &star, 0);
        let mean = k_star.dot(&self.alpha);
        let v = solve_lower_vec(&self.chol, &k_star);
        let prior = kern.diag_value();
        Ok(PredictiveGaussian::new(mean, prior - v.norm_squared(), self.params.noise()))
    }

    pub fn predict_batch(&self, points: &GpInputs) -> Result<Vec<PredictiveGaussian>> {
        (0..points.len()).map(|i| self.predict(points.x(i), points.yhat(i))).collect()
    }
}

/// Maximizes the log marginal likelihood from `init` and conditions on the
/// result. A non-converged optimizer run keeps the best iterate and records a
/// warning in the model's [`FitReport`].
pub fn fit_exact(
    points: &GpInputs,
    targets: &[f64],
    init: &KernelParams,
    sel: &KernelSelector,
    opt: &OptConfig,
) -> Result<ExactGpModel> {
    if points.len() < 2 {
        return Err(Error::invalid("fit_exact needs at least 2 points"));
    }
    validate(init, sel, points, targets)?;
    let mut start = init.clone();
    start.clamp_to_bounds(sel);
    let cfg = OptConfig { bounds: Some(start.bounds(sel)), ..opt.clone() };
    let objective = |v: &[f64]| match lml_with_gradient(&start.with_vec(sel, v), sel, points, targets) {
        Ok((lml, g)) => (-lml, g.into_iter().map(|x| -x).collect()),
        Err(_) => (f64::INFINITY, vec![0.0; v.len()]),
    };
    let result = minimize(objective, &start.to_vec(sel), &cfg)?;
    let params = start.with_vec(sel, &result.x_final);
    let mut model = ExactGpModel::condition(&params, sel, points, targets)?;
    model.fit = Some(FitReport::from_opt(&result));
    Ok(model)
}

pub fn predict_exact(model: &ExactGpModel, x_star: &[f64], yhat_star: f64) -> Result<PredictiveGaussian> {
    model.predict(x_star, yhat_star)
}
