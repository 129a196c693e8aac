//! RBF kernels and the composite input/output kernel
//! `k_c((x, ŷ), (x', ŷ')) = k_in(x, x') + k_out(ŷ, ŷ')`.
//!
//! Hyperparameters live in log space. Derivatives are taken with respect to
//! the log values, so `∂k/∂log σ² = k` and `∂k/∂log l = k · Δ²/l²`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::data_io::stream_rng;
use crate::error::{Error, Result};

/// Box bound for every log-hyperparameter except the noise.
pub const LOG_PARAM_BOUND: f64 = 12.0;
/// Lower bound on the noise variance σ_n².
pub const MIN_NOISE_VARIANCE: f64 = 1e-8;

/// Points in the joint (x, ŷ) space, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpInputs {
    d: usize,
    x: Vec<f64>,
    yhat: Vec<f64>,
}

impl GpInputs {
    pub fn new(x: &DMatrix<f64>, yhat: &[f64]) -> Result<Self> {
        if x.nrows() != yhat.len() {
            return Err(Error::LengthMismatch {
                expected: x.nrows(),
                found: yhat.len(),
            });
        }
        let mut flat = Vec::with_capacity(x.len());
        for r in x.row_iter() {
            flat.extend(r.iter());
        }
        Self::from_parts(x.ncols(), flat, yhat.to_vec())
    }

    /// Inputs without a base-model coordinate (ŷ fixed to 0).
    pub fn from_features(x: &DMatrix<f64>) -> Self {
        Self::new(x, &vec![0.0; x.nrows()]).expect("lengths agree")
    }

    pub fn from_parts(d: usize, x: Vec<f64>, yhat: Vec<f64>) -> Result<Self> {
        if d == 0 && !x.is_empty() || d > 0 && x.len() != d * yhat.len() {
            return Err(Error::DimensionMismatch {
                expected: d * yhat.len(),
                found: x.len(),
            });
        }
        if x.iter().chain(&yhat).any(|v| !v.is_finite()) {
            return Err(Error::invalid("GP inputs must be finite"));
        }
        Ok(Self { d, x, yhat })
    }

    pub fn single(x: &[f64], yhat: f64) -> Self {
        Self {
            d: x.len(),
            x: x.to_vec(),
            yhat: vec![yhat],
        }
    }

    pub fn len(&self) -> usize {
        self.yhat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.yhat.is_empty()
    }

    /// Feature dimension (excluding the ŷ coordinate).
    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn yhat(&self, i: usize) -> f64 {
        self.yhat[i]
    }

    pub fn yhat_all(&self) -> &[f64] {
        &self.yhat
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        let mut x = Vec::with_capacity(idx.len() * self.d);
        let mut yhat = Vec::with_capacity(idx.len());
        for &i in idx {
            x.extend_from_slice(self.x(i));
            yhat.push(self.yhat[i]);
        }
        Self { d: self.d, x, yhat }
    }

    /// Coordinate `k` of point `i`, with `k == dim()` addressing ŷ.
    pub fn coord(&self, i: usize, k: usize) -> f64 {
        if k == self.d {
            self.yhat[i]
        } else {
            self.x[i * self.d + k]
        }
    }

    pub fn coord_mut(&mut self, i: usize, k: usize) -> &mut f64 {
        if k == self.d {
            &mut self.yhat[i]
        } else {
            &mut self.x[i * self.d + k]
        }
    }

    /// Per-coordinate (min, max) over all points, ŷ last.
    pub fn bounding_box(&self) -> Vec<(f64, f64)> {
        (0..=self.d)
            .map(|k| {
                (0..self.len()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), i| {
                    let v = self.coord(i, k);
                    (lo.min(v), hi.max(v))
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelSelector {
    pub use_input: bool,
    pub use_output: bool,
    pub ard: bool,
}

impl KernelSelector {
    pub const INPUT: Self = Self { use_input: true, use_output: false, ard: false };
    pub const OUTPUT: Self = Self { use_input: false, use_output: true, ard: false };
    pub const IO: Self = Self { use_input: true, use_output: true, ard: false };

    pub fn with_ard(mut self, ard: bool) -> Self {
        self.ard = ard;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.use_input && !self.use_output {
            return Err(Error::invalid("kernel selector must enable input or output kernel"));
        }
        Ok(())
    }
}

/// Names a single free hyperparameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HyperParam {
    SignalIn,
    LengthscaleIn(usize),
    SignalOut,
    LengthscaleOut,
    Noise,
}

impl HyperParam {
    pub fn name(&self) -> String {
        match self {
            HyperParam::SignalIn => "log_sigma2_in".into(),
            HyperParam::LengthscaleIn(k) => format!("log_lengthscale_in_{k}"),
            HyperParam::SignalOut => "log_sigma2_out".into(),
            HyperParam::LengthscaleOut => "log_lengthscale_out".into(),
            HyperParam::Noise => "log_noise".into(),
        }
    }
}

/// Log-space kernel and noise hyperparameters. `log_lengthscale_in` has one
/// entry (isotropic) or one per feature (ARD).
#[derive(Debug, Clone, PartialEq)]
pub struct KernelParams {
    pub log_sigma2_in: f64,
    pub log_lengthscale_in: Vec<f64>,
    pub log_sigma2_out: f64,
    pub log_lengthscale_out: f64,
    pub log_noise: f64,
}

impl KernelParams {
    pub fn from_natural(
        sigma2_in: f64,
        lengthscale_in: &[f64],
        sigma2_out: f64,
        lengthscale_out: f64,
        noise: f64,
    ) -> Self {
        Self {
            log_sigma2_in: sigma2_in.ln(),
            log_lengthscale_in: lengthscale_in.iter().map(|l| l.ln()).collect(),
            log_sigma2_out: sigma2_out.ln(),
            log_lengthscale_out: lengthscale_out.ln(),
            log_noise: noise.ln(),
        }
    }

    pub fn noise(&self) -> f64 {
        self.log_noise.exp()
    }

    pub fn is_ard(&self) -> bool {
        self.log_lengthscale_in.len() > 1
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let all = [self.log_sigma2_in, self.log_sigma2_out, self.log_lengthscale_out, self.log_noise];
        if all.iter().chain(&self.log_lengthscale_in).any(|v| !v.is_finite()) {
            return Err(Error::invalid("kernel hyperparameters must be finite"));
        }
        let l = self.log_lengthscale_in.len();
        if l != 1 && l != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: l });
        }
        Ok(())
    }

    /// Free kernel hyperparameters (noise excluded) in optimizer order.
    pub fn free_params(&self, sel: &KernelSelector) -> Vec<HyperParam> {
        let mut out = Vec::new();
        if sel.use_input {
            out.push(HyperParam::SignalIn);
            out.extend((0..self.log_lengthscale_in.len()).map(HyperParam::LengthscaleIn));
        }
        if sel.use_output {
            out.push(HyperParam::SignalOut);
            out.push(HyperParam::LengthscaleOut);
        }
        out
    }

    pub fn get(&self, p: HyperParam) -> f64 {
        match p {
            HyperParam::SignalIn => self.log_sigma2_in,
            HyperParam::LengthscaleIn(k) => self.log_lengthscale_in[k],
            HyperParam::SignalOut => self.log_sigma2_out,
            HyperParam::LengthscaleOut => self.log_lengthscale_out,
            HyperParam::Noise => self.log_noise,
        }
    }

    pub fn set(&mut self, p: HyperParam, v: f64) {
        match p {
            HyperParam::SignalIn => self.log_sigma2_in = v,
            HyperParam::LengthscaleIn(k) => self.log_lengthscale_in[k] = v,
            HyperParam::SignalOut => self.log_sigma2_out = v,
            HyperParam::LengthscaleOut => self.log_lengthscale_out = v,
            HyperParam::Noise => self.log_noise = v,
        }
    }

    /// `[free kernel params..., log_noise]`.
    pub fn to_vec(&self, sel: &KernelSelector) -> Vec<f64> {
        let mut v: Vec<f64> = self.free_params(sel).into_iter().map(|p| self.get(p)).collect();
        v.push(self.log_noise);
        v
    }

    /// Inverse of [`to_vec`](Self::to_vec); inactive parameters keep their values.
    pub fn with_vec(&self, sel: &KernelSelector, v: &[f64]) -> Self {
        let mut out = self.clone();
        let free = self.free_params(sel);
        for (p, &x) in free.iter().zip(v) {
            out.set(*p, x);
        }
        out.log_noise = v[free.len()];
        out
    }

    /// Optimizer box for [`to_vec`](Self::to_vec).
    pub fn bounds(&self, sel: &KernelSelector) -> Vec<(f64, f64)> {
        let mut b = vec![(-LOG_PARAM_BOUND, LOG_PARAM_BOUND); self.free_params(sel).len()];
        b.push((MIN_NOISE_VARIANCE.ln(), LOG_PARAM_BOUND));
        b
    }

    pub fn clamp_to_bounds(&mut self, sel: &KernelSelector) {
        let v = self.to_vec(sel);
        let b = self.bounds(sel);
        let c: Vec<f64> = v.iter().zip(&b).map(|(x, (lo, hi))| x.clamp(*lo, *hi)).collect();
        *self = self.with_vec(sel, &c);
    }

    pub fn to_named_map(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        m.insert(HyperParam::SignalIn.name(), self.log_sigma2_in);
        for (k, v) in self.log_lengthscale_in.iter().enumerate() {
            m.insert(HyperParam::LengthscaleIn(k).name(), *v);
        }
        m.insert(HyperParam::SignalOut.name(), self.log_sigma2_out);
        m.insert(HyperParam::LengthscaleOut.name(), self.log_lengthscale_out);
        m.insert(HyperParam::Noise.name(), self.log_noise);
        m
    }

    pub fn from_named_map(m: &BTreeMap<String, f64>) -> Result<Self> {
        let get = |k: &str| {
            m.get(k)
                .copied()
                .ok_or_else(|| Error::Corrupted(format!("missing kernel parameter {k}")))
        };
        let mut ls = Vec::new();
        while let Some(v) = m.get(&HyperParam::LengthscaleIn(ls.len()).name()) {
            ls.push(*v);
        }
        if ls.is_empty() {
            return Err(Error::Corrupted("missing input lengthscale".into()));
        }
        let p = Self {
            log_sigma2_in: get("log_sigma2_in")?,
            log_lengthscale_in: ls,
            log_sigma2_out: get("log_sigma2_out")?,
            log_lengthscale_out: get("log_lengthscale_out")?,
            log_noise: get("log_noise")?,
        };
        if m.len() != p.log_lengthscale_in.len() + 4 {
            return Err(Error::Corrupted("unexpected kernel parameter names".into()));
        }
        Ok(p)
    }

    /// Scale-aware starting point.
    ///
    /// σ_in² = σ_out² = var(targets)/2, σ_n² = 0.1·var(targets); l_in is the
    /// median pairwise distance over a seeded 256-point subsample (per-dimension
    /// medians under ARD); l_out is the median pairwise |ŷ_i − ŷ_j|. Zero medians
    /// fall back to 1. The result is clamped into the optimizer box.
    pub fn default_init(inputs: &GpInputs, targets: &[f64], sel: &KernelSelector, seed: u64) -> Self {
        let n = targets.len().max(1) as f64;
        let mean = targets.iter().sum::<f64>() / n;
        let var = targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
        let var = var.max(f64::MIN_POSITIVE);

        let idx: Vec<usize> = if inputs.len() > 256 {
            let mut v = sample(&mut stream_rng(seed, 0x6b65_726e), inputs.len(), 256).into_vec();
            v.sort_unstable();
            v
        } else {
            (0..inputs.len()).collect()
        };
        let d = inputs.dim();
        let mut per_dim: Vec<Vec<f64>> = vec![Vec::new(); d];
        let mut dist = Vec::new();
        let mut out_dist = Vec::new();
        for (a, &i) in idx.iter().enumerate() {
            for &j in &idx[a + 1..] {
                let (xi, xj) = (inputs.x(i), inputs.x(j));
                let mut r2 = 0.0;
                for k in 0..d {
                    let dk = xi[k] - xj[k];
                    per_dim[k].push(dk.abs());
                    r2 += dk * dk;
                }
                dist.push(r2.sqrt());
                out_dist.push((inputs.yhat(i) - inputs.yhat(j)).abs());
            }
        }
        let ls_in = if sel.ard {
            per_dim.iter_mut().map(|v| positive_median(v)).collect()
        } else {
            vec![positive_median(&mut dist)]
        };
        let mut p = Self::from_natural(var / 2.0, &ls_in, var / 2.0, positive_median(&mut out_dist), 0.1 * var);
        p.clamp_to_bounds(sel);
        // Inactive parameters are also kept inside the box so they serialize cleanly.
        p.log_sigma2_in = p.log_sigma2_in.clamp(-LOG_PARAM_BOUND, LOG_PARAM_BOUND);
        p.log_sigma2_out = p.log_sigma2_out.clamp(-LOG_PARAM_BOUND, LOG_PARAM_BOUND);
        p
    }
}

fn positive_median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return 1.0;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    let med = if v.len().is_multiple_of(2) { 0.5 * (v[m - 1] + v[m]) } else { v[m] };
    if med > 0.0 && med.is_finite() {
        med
    } else {
        1.0
    }
}

impl Serialize for KernelParams {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_named_map().serialize(s)
    }
}

impl<'de> Deserialize<'de> for KernelParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let m = BTreeMap::<String, f64>::deserialize(d)?;
        Self::from_named_map(&m).map_err(serde::de::Error::custom)
    }
}

/// `σ² · exp(−½ Σ_k (u_k − v_k)² / l_k²)`. A single lengthscale applies to
/// every dimension.
pub fn rbf_eval(sigma2: f64, lengthscale: &[f64], u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch { expected: u.len(), found: v.len() });
    }
    if lengthscale.len() != 1 && lengthscale.len() != u.len() {
        return Err(Error::DimensionMismatch { expected: u.len(), found: lengthscale.len() });
    }
    if !(sigma2 > 0.0) || lengthscale.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::invalid("RBF hyperparameters must be positive"));
    }
    let inv: Vec<f64> = lengthscale.iter().map(|l| 1.0 / (l * l)).collect();
    Ok(sigma2 * (-0.5 * scaled_sq_dist(&inv, u, v)).exp())
}

#[inline]
fn scaled_sq_dist(inv_l2: &[f64], u: &[f64], v: &[f64]) -> f64 {
    if inv_l2.len() == 1 {
        let r2: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
        r2 * inv_l2[0]
    } else {
        u.iter()
            .zip(v)
            .zip(inv_l2)
            .map(|((a, b), w)| (a - b) * (a - b) * w)
            .sum()
    }
}

/// Natural-space view of the active kernel parts, precomputed once per
/// evaluation batch.
#[derive(Debug, Clone)]
pub(crate) struct ActiveKernel {
    pub sel: KernelSelector,
    pub sigma2_in: f64,
    pub inv_l2_in: Vec<f64>,
    pub sigma2_out: f64,
    pub inv_l2_out: f64,
}

impl ActiveKernel {
    pub fn new(params: &KernelParams, sel: &KernelSelector) -> Self {
        Self {
            sel: *sel,
            sigma2_in: params.log_sigma2_in.exp(),
            inv_l2_in: params.log_lengthscale_in.iter().map(|l| (-2.0 * l).exp()).collect(),
            sigma2_out: params.log_sigma2_out.exp(),
            inv_l2_out: (-2.0 * params.log_lengthscale_out).exp(),
        }
    }

    #[inline]
    pub fn k_in(&self, a: &[f64], b: &[f64]) -> f64 {
        self.sigma2_in * (-0.5 * scaled_sq_dist(&self.inv_l2_in, a, b)).exp()
    }

    #[inline]
    pub fn k_out(&self, a: f64, b: f64) -> f64 {
        let d = a - b;
        self.sigma2_out * (-0.5 * d * d * self.inv_l2_out).exp()
    }

    #[inline]
    pub fn eval(&self, a: &GpInputs, i: usize, b: &GpInputs, j: usize) -> f64 {
        let mut k = 0.0;
        if self.sel.use_input {
            k += self.k_in(a.x(i), b.x(j));
        }
        if self.sel.use_output {
            k += self.k_out(a.yhat(i), b.yhat(j));
        }
        k
    }

    pub fn diag_value(&self) -> f64 {
        let mut k = 0.0;
        if self.sel.use_input {
            k += self.sigma2_in;
        }
        if self.sel.use_output {
            k += self.sigma2_out;
        }
        k
    }

    pub fn gram(&self, a: &GpInputs, b: &GpInputs) -> DMatrix<f64> {
        DMatrix::from_fn(a.len(), b.len(), |i, j| self.eval(a, i, b, j))
    }

    pub fn gram_sym(&self, a: &GpInputs) -> DMatrix<f64> {
        let n = a.len();
        let mut k = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in j..n {
                let v = if i == j { self.diag_value() } else { self.eval(a, i, a, j) };
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }

    pub fn cross_vector(&self, a: &GpInputs, b: &GpInputs, j: usize) -> DVector<f64> {
        DVector::from_fn(a.len(), |i, _| self.eval(a, i, b, j))
    }

    /// `Σ_ij W_ij ∂K(A,B)_ij/∂θ` for each free kernel parameter θ.
    pub fn contract_param_gradients(&self, a: &GpInputs, b: &GpInputs, w: &DMatrix<f64>) -> Vec<f64> {
        let ard = self.inv_l2_in.len() > 1;
        let nl = self.inv_l2_in.len();
        let mut g_sig_in = 0.0;
        let mut g_len_in = vec![0.0; nl];
        let mut g_sig_out = 0.0;
        let mut g_len_out = 0.0;
        let d = a.dim();
        for j in 0..b.len() {
            let xb = b.x(j);
            for i in 0..a.len() {
                let wij = w[(i, j)];
                if wij == 0.0 {
                    continue;
                }
                if self.sel.use_input {
                    let xa = a.x(i);
                    let k = self.k_in(xa, xb);
                    let wk = wij * k;
                    g_sig_in += wk;
                    if ard {
                        for t in 0..d {
                            let dt = xa[t] - xb[t];
                            g_len_in[t] += wk * dt * dt * self.inv_l2_in[t];
                        }
                    } else {
                        let r2: f64 = xa.iter().zip(xb).map(|(p, q)| (p - q) * (p - q)).sum();
                        g_len_in[0] += wk * r2 * self.inv_l2_in[0];
                    }
                }
                if self.sel.use_output {
                    let dy = a.yhat(i) - b.yhat(j);
                    let wk = wij * self.k_out(a.yhat(i), b.yhat(j));
                    g_sig_out += wk;
                    g_len_out += wk * dy * dy * self.inv_l2_out;
                }
            }
        }
        let mut out = Vec::new();
        if self.sel.use_input {
            out.push(g_sig_in);
            out.extend(g_len_in);
        }
        if self.sel.use_output {
            out.push(g_sig_out);
            out.push(g_len_out);
        }
        out
    }

    /// `G[i, k] = Σ_j W_ij ∂k(a_i, b_j)/∂a_ik`, with `k == dim` the ŷ coordinate.
    pub fn contract_input_gradients(&self, a: &GpInputs, b: &GpInputs, w: &DMatrix<f64>) -> DMatrix<f64> {
        let d = a.dim();
        let mut g = DMatrix::zeros(a.len(), d + 1);
        for i in 0..a.len() {
            let xa = a.x(i);
            for j in 0..b.len() {
                let wij = w[(i, j)];
                if wij == 0.0 {
                    continue;
                }
                if self.sel.use_input {
                    let xb = b.x(j);
                    let wk = wij * self.k_in(xa, xb);
                    for t in 0..d {
                        let il = if self.inv_l2_in.len() > 1 { self.inv_l2_in[t] } else { self.inv_l2_in[0] };
                        g[(i, t)] -= wk * (xa[t] - xb[t]) * il;
                    }
                }
                if self.sel.use_output {
                    let dy = a.yhat(i) - b.yhat(j);
                    g[(i, d)] -= wij * self.k_out(a.yhat(i), b.yhat(j)) * dy * self.inv_l2_out;
                }
            }
        }
        g
    }
}

fn check_dims(params: &KernelParams, sel: &KernelSelector, a: &GpInputs, b: &GpInputs) -> Result<()> {
    sel.validate()?;
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), found: b.dim() });
    }
    params.validate(a.dim())
}

/// Composite kernel at a single pair of points.
pub fn composite_eval(
    params: &KernelParams,
    sel: &KernelSelector,
    x_i: &[f64],
    yhat_i: f64,
    x_j: &[f64],
    yhat_j: f64,
) -> Result<f64> {
    sel.validate()?;
    if x_i.len() != x_j.len() {
        return Err(Error::DimensionMismatch { expected: x_i.len(), found: x_j.len() });
    }
    params.validate(x_i.len())?;
    let ls: Vec<f64> = params.log_lengthscale_in.iter().map(|l| l.exp()).collect();
    let mut k = 0.0;
    if sel.use_input {
        k += rbf_eval(params.log_sigma2_in.exp(), &ls, x_i, x_j)?;
    }
    if sel.use_output {
        k += rbf_eval(
            params.log_sigma2_out.exp(),
            &[params.log_lengthscale_out.exp()],
            &[yhat_i],
            &[yhat_j],
        )?;
    }
    Ok(k)
}

pub fn gram(params: &KernelParams, sel: &KernelSelector, a: &GpInputs, b: &GpInputs) -> Result<DMatrix<f64>> {
    check_dims(params, sel, a, b)?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("gram requires non-empty point lists"));
    }
    Ok(ActiveKernel::new(params, sel).gram(a, b))
}

/// `∂K(A,A)/∂θ` for each free kernel log-hyperparameter (noise excluded).
pub fn gram_gradients(
    params: &KernelParams,
    sel: &KernelSelector,
    a: &GpInputs,
) -> Result<Vec<(HyperParam, DMatrix<f64>)>> {
    check_dims(params, sel, a, a)?;
    let kern = ActiveKernel::new(params, sel);
    let n = a.len();
    let mut out = Vec::new();
    if sel.use_input {
        let k_in = DMatrix::from_fn(n, n, |i, j| kern.k_in(a.x(i), a.x(j)));
        out.push((HyperParam::SignalIn, k_in.clone()));
        let nl = kern.inv_l2_in.len();
        for t in 0..nl {
            let m = DMatrix::from_fn(n, n, |i, j| {
                let (xi, xj) = (a.x(i), a.x(j));
                let r2 = if nl > 1 {
                    (xi[t] - xj[t]).powi(2)
                } else {
                    xi.iter().zip(xj).map(|(p, q)| (p - q) * (p - q)).sum()
                };
                k_in[(i, j)] * r2 * kern.inv_l2_in[t]
            });
            out.push((HyperParam::LengthscaleIn(t), m));
        }
    }
    if sel.use_output {
        let k_out = DMatrix::from_fn(n, n, |i, j| kern.k_out(a.yhat(i), a.yhat(j)));
        let m = DMatrix::from_fn(n, n, |i, j| {
            let dy = a.yhat(i) - a.yhat(j);
            k_out[(i, j)] * dy * dy * kern.inv_l2_out
        });
        out.push((HyperParam::SignalOut, k_out));
        out.push((HyperParam::LengthscaleOut, m));
    }
    Ok(out)
}
