//! Residual estimation with an input/output kernel, and its ablations.
//!
//! A GP is trained on either the residuals `r = y − ŷ` of a base model or on
//! the raw (centred) outcomes, over the standardized features and the
//! standardized base-model output. Residual variants predict
//! `ŷ* + r̄*` with the GP variance; raw-outcome variants predict the GP mean
//! plus the training-target mean.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data_io::{Dataset, Standardizer};
use crate::error::{Error, Result};
use crate::exact_gp::{fit_exact, ExactGpModel, FitReport};
use crate::hyperopt::OptConfig;
use crate::kernels::{GpInputs, KernelParams, KernelSelector};
use crate::predictive::PredictiveGaussian;
use crate::sparse_gp::{fit_sparse, SparseGpModel, DEFAULT_INDUCING};

pub const MODEL_FORMAT_VERSION: u32 = 1;
/// Largest training set accepted by the exact backend.
pub const EXACT_MAX_N: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Residuals,
    RawOutcomes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    InputOnly,
    OutputOnly,
    Io,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Variant {
    pub target: TargetKind,
    pub kernel: KernelKind,
}

impl Variant {
    pub const RIO: Self = Self { target: TargetKind::Residuals, kernel: KernelKind::Io };
    pub const R_I: Self = Self { target: TargetKind::Residuals, kernel: KernelKind::InputOnly };
    pub const R_O: Self = Self { target: TargetKind::Residuals, kernel: KernelKind::OutputOnly };
    pub const Y_IO: Self = Self { target: TargetKind::RawOutcomes, kernel: KernelKind::Io };
    pub const Y_O: Self = Self { target: TargetKind::RawOutcomes, kernel: KernelKind::OutputOnly };
    /// Plain sparse GP on raw outcomes over the inputs.
    pub const SVGP: Self = Self { target: TargetKind::RawOutcomes, kernel: KernelKind::InputOnly };

    pub const ALL: [Self; 6] = [Self::RIO, Self::R_I, Self::R_O, Self::Y_IO, Self::Y_O, Self::SVGP];

    pub fn name(&self) -> &'static str {
        match (self.target, self.kernel) {
            (TargetKind::Residuals, KernelKind::Io) => "rio",
            (TargetKind::Residuals, KernelKind::InputOnly) => "r+i",
            (TargetKind::Residuals, KernelKind::OutputOnly) => "r+o",
            (TargetKind::RawOutcomes, KernelKind::Io) => "y+io",
            (TargetKind::RawOutcomes, KernelKind::OutputOnly) => "y+o",
            (TargetKind::RawOutcomes, KernelKind::InputOnly) => "svgp",
        }
    }

    pub fn selector(&self, ard: bool) -> KernelSelector {
        match self.kernel {
            KernelKind::InputOnly => KernelSelector::INPUT,
            KernelKind::OutputOnly => KernelSelector::OUTPUT,
            KernelKind::Io => KernelSelector::IO,
        }
        .with_ard(ard)
    }

    pub fn uses_output_kernel(&self) -> bool {
        self.kernel != KernelKind::InputOnly
    }

    /// Whether training and prediction need base-model outputs.
    pub fn needs_predictions(&self) -> bool {
        self.uses_output_kernel() || self.target == TargetKind::Residuals
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.to_ascii_lowercase();
        let s = if s == "y+i" { "svgp" } else { s.as_str() };
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown variant '{s}' (expected rio, r+i, r+o, y+io, y+o, svgp)")))
    }
}

impl Serialize for Variant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Variant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Sparse,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpConfig {
    pub backend: Backend,
    pub inducing: usize,
    pub ard: bool,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self { backend: Backend::Sparse, inducing: DEFAULT_INDUCING, ard: false, max_iters: 1000, seed: 0 }
    }
}

impl GpConfig {
    pub fn opt_config(&self) -> OptConfig {
        OptConfig { max_iters: self.max_iters, ..OptConfig::default() }
    }
}

#[derive(Debug, Clone)]
pub enum GpModel {
    Exact(ExactGpModel),
    Sparse(SparseGpModel),
}

impl GpModel {
    pub fn params(&self) -> &KernelParams {
        match self {
            GpModel::Exact(m) => &m.params,
            GpModel::Sparse(m) => &m.params,
        }
    }

    pub fn selector(&self) -> &KernelSelector {
        match self {
            GpModel::Exact(m) => &m.selector,
            GpModel::Sparse(m) => &m.selector,
        }
    }

    pub fn fit_report(&self) -> Option<&FitReport> {
        match self {
            GpModel::Exact(m) => m.fit.as_ref(),
            GpModel::Sparse(m) => m.fit.as_ref(),
        }
    }

    pub fn predict(&self, x: &[f64], yhat: f64) -> Result<PredictiveGaussian> {
        match self {
            GpModel::Exact(m) => m.predict(x, yhat),
            GpModel::Sparse(m) => m.predict(x, yhat),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RioMetadata {
    pub dataset: String,
    pub seed: u64,
    pub fit_wall_time_sec: f64,
}

#[derive(Debug, Clone)]
pub struct RioModel {
    pub variant: Variant,
    pub gp: GpModel,
    pub standardizer: Standardizer,
    /// Present iff the variant uses the output kernel.
    pub yhat_standardizer: Option<Standardizer>,
    pub target_shift: f64,
    pub metadata: RioMetadata,
}

impl RioModel {
    pub fn noise_variance(&self) -> f64 {
        self.gp.params().noise()
    }

    fn yhat_coord(&self, yhat: Option<f64>) -> Result<f64> {
        if self.variant.needs_predictions() && yhat.is_none() {
            return Err(Error::MissingPredictions(self.variant.name().into()));
        }
        Ok(match (&self.yhat_standardizer, yhat) {
            (Some(s), Some(v)) => s.transform_scalar(v),
            _ => 0.0,
        })
    }
}

pub fn compute_residuals(y: &[f64], yhat: &[f64]) -> Result<Vec<f64>> {
    if y.len() != yhat.len() {
        return Err(Error::LengthMismatch { expected: y.len(), found: yhat.len() });
    }
    if y.iter().chain(yhat).any(|v| !v.is_finite()) {
        return Err(Error::invalid("residuals need finite inputs"));
    }
    Ok(y.iter().zip(yhat).map(|(a, b)| a - b).collect())
}

/// Fits `variant` on the rows `train_idx`. `base_predictions[i]` is the base
/// model's output for row `train_idx[i]`.
pub fn train(
    variant: Variant,
    ds: &Dataset,
    train_idx: &[usize],
    base_predictions: Option<&[f64]>,
    cfg: &GpConfig,
) -> Result<RioModel> {
    let start = Instant::now();
    if train_idx.len() < 2 {
        return Err(Error::invalid("training needs at least 2 rows"));
    }
    if let Some(&bad) = train_idx.iter().find(|&&i| i >= ds.n()) {
        return Err(Error::invalid(format!("train index {bad} out of range for {} rows", ds.n())));
    }
    let preds = match (variant.needs_predictions(), base_predictions) {
        (true, None) => return Err(Error::MissingPredictions(variant.name().into())),
        (true, Some(p)) => {
            if p.len() != train_idx.len() {
                return Err(Error::LengthMismatch { expected: train_idx.len(), found: p.len() });
            }
            Some(p)
        }
        (false, _) => None,
    };
    if cfg.backend == Backend::Exact && train_idx.len() > EXACT_MAX_N {
        return Err(Error::invalid(format!("exact backend supports at most {EXACT_MAX_N} training rows")));
    }

    let standardizer = Standardizer::fit_rows(&ds.features, train_idx)?;
    let x = standardizer.transform(&ds.feature_rows(train_idx))?;
    let y: Vec<f64> = train_idx.iter().map(|&i| ds.targets[i]).collect();

    let yhat_standardizer = match (variant.uses_output_kernel(), preds) {
        (true, Some(p)) => Some(Standardizer::fit_vector(p)?),
        _ => None,
    };
    let yhat_coords: Vec<f64> = match (&yhat_standardizer, preds) {
        (Some(s), Some(p)) => p.iter().map(|&v| s.transform_scalar(v)).collect(),
        _ => vec![0.0; y.len()],
    };
    let points = GpInputs::new(&x, &yhat_coords)?;

    let (targets, target_shift) = match variant.target {
        TargetKind::Residuals => (compute_residuals(&y, preds.expect("checked above"))?, 0.0),
        TargetKind::RawOutcomes => {
            let mean = y.iter().sum::<f64>() / y.len() as f64;
            (y.iter().map(|v| v - mean).collect(), mean)
        }
    };

    let sel = variant.selector(cfg.ard);
    let init = KernelParams::default_init(&points, &targets, &sel, cfg.seed);
    let opt = cfg.opt_config();
    let gp = match cfg.backend {
        Backend::Exact => GpModel::Exact(fit_exact(&points, &targets, &init, &sel, &opt)?),
        Backend::Sparse => {
            let m = cfg.inducing.min(points.len());
            GpModel::Sparse(fit_sparse(&points, &targets, m, &init, &sel, &opt, cfg.seed)?)
        }
    };
    Ok(RioModel {
        variant,
        gp,
        standardizer,
        yhat_standardizer,
        target_shift,
        metadata: RioMetadata {
            dataset: ds.name.clone(),
            seed: cfg.seed,
            fit_wall_time_sec: start.elapsed().as_secs_f64(),
        },
    })
}

/// Calibrated predictive distribution at raw features `x_star`.
pub fn calibrate(model: &RioModel, x_star: &[f64], yhat_star: Option<f64>) -> Result<PredictiveGaussian> {
    let yc = model.yhat_coord(yhat_star)?;
    let z = model.standardizer.transform_row(x_star)?;
    let g = model.gp.predict(&z, yc)?;
    Ok(match model.variant.target {
        TargetKind::Residuals => g.shifted(yhat_star.expect("checked by yhat_coord")),
        TargetKind::RawOutcomes => g.shifted(model.target_shift),
    })
}

pub fn calibrate_batch(model: &RioModel, features: &DMatrix<f64>, yhat: Option<&[f64]>) -> Result<Vec<PredictiveGaussian>> {
    if let Some(p) = yhat {
        if p.len() != features.nrows() {
            return Err(Error::LengthMismatch { expected: features.nrows(), found: p.len() });
        }
    }
    (0..features.nrows())
        .map(|i| {
            let row: Vec<f64> = features.row(i).iter().copied().collect();
            calibrate(model, &row, yhat.map(|p| p[i]))
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum BackendFile {
    /// Training data; the posterior is recomputed deterministically on load.
    Exact { train: GpInputs, targets: Vec<f64> },
    Sparse {
        inducing: GpInputs,
        chol_kuu: Vec<Vec<f64>>,
        chol_b: Vec<Vec<f64>>,
        mean_weights: Vec<f64>,
    },
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    variant: Variant,
    selector: KernelSelector,
    kernel_params: KernelParams,
    standardizer: Standardizer,
    yhat_standardizer: Option<Standardizer>,
    target_shift: f64,
    metadata: RioMetadata,
    fit: Option<FitReport>,
    gp: BackendFile,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn lower_factor(rows: &[Vec<f64>], m: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != m || rows.iter().any(|r| r.len() != m) {
        return Err(Error::Corrupted(format!("{what} must be {m}x{m}")));
    }
    let f = DMatrix::from_fn(m, m, |i, j| rows[i][j]);
    let bad_diag = (0..m).any(|i| !(f[(i, i)] > 0.0));
    let upper = (0..m).any(|i| (i + 1..m).any(|j| f[(i, j)] != 0.0));
    if bad_diag || upper || f.iter().any(|v| !v.is_finite()) {
        return Err(Error::Corrupted(format!("{what} is not a valid Cholesky factor")));
    }
    Ok(f)
}

pub fn model_to_json(model: &RioModel) -> String {
    let gp = match &model.gp {
        GpModel::Exact(m) => BackendFile::Exact { train: m.train.clone(), targets: m.targets.clone() },
        GpModel::Sparse(m) => BackendFile::Sparse {
            inducing: m.inducing.clone(),
            chol_kuu: rows(&m.chol_kuu),
            chol_b: rows(&m.chol_b),
            mean_weights: m.mean_weights.iter().copied().collect(),
        },
    };
    let file = ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        variant: model.variant,
        selector: *model.gp.selector(),
        kernel_params: model.gp.params().clone(),
        standardizer: model.standardizer.clone(),
        yhat_standardizer: model.yhat_standardizer.clone(),
        target_shift: model.target_shift,
        metadata: model.metadata.clone(),
        fit: model.gp.fit_report().cloned(),
        gp,
    };
    serde_json::to_string_pretty(&file).expect("model serializes")
}

pub fn model_from_json(text: &str) -> Result<RioModel> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::Corrupted(e.to_string()))?;
    let version = value
        .get("format_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::Corrupted("missing format_version".into()))?;
    if version != MODEL_FORMAT_VERSION as u64 {
        return Err(Error::Version { found: version.min(u32::MAX as u64) as u32, supported: MODEL_FORMAT_VERSION });
    }
    let f: ModelFile = serde_json::from_value(value).map_err(|e| Error::Corrupted(e.to_string()))?;
    let sel = f.selector;
    if sel != f.variant.selector(sel.ard) {
        return Err(Error::Corrupted("selector does not match variant".into()));
    }
    if f.variant.uses_output_kernel() != f.yhat_standardizer.is_some() {
        return Err(Error::Corrupted("output standardizer presence does not match variant".into()));
    }
    let corrupt = |e: Error| Error::Corrupted(e.to_string());
    let gp = match f.gp {
        BackendFile::Exact { train, targets } => {
            let mut m = ExactGpModel::condition(&f.kernel_params, &sel, &train, &targets).map_err(corrupt)?;
            m.fit = f.fit;
            GpModel::Exact(m)
        }
        BackendFile::Sparse { inducing, chol_kuu, chol_b, mean_weights } => {
            f.kernel_params.validate(inducing.dim()).map_err(corrupt)?;
            let m = inducing.len();
            if m == 0 || mean_weights.len() != m || mean_weights.iter().any(|v| !v.is_finite()) {
                return Err(Error::Corrupted("sparse cache has inconsistent sizes".into()));
            }
            GpModel::Sparse(SparseGpModel {
                params: f.kernel_params,
                selector: sel,
                chol_kuu: lower_factor(&chol_kuu, m, "chol_kuu")?,
                chol_b: lower_factor(&chol_b, m, "chol_b")?,
                mean_weights: DVector::from_vec(mean_weights),
                inducing,
                fit: f.fit,
            })
        }
    };
    let d = match &gp {
        GpModel::Exact(m) => m.train.dim(),
        GpModel::Sparse(m) => m.inducing.dim(),
    };
    if f.standardizer.dim() != d {
        return Err(Error::Corrupted("standardizer dimension does not match the GP".into()));
    }
    Ok(RioModel {
        variant: f.variant,
        gp,
        standardizer: f.standardizer,
        yhat_standardizer: f.yhat_standardizer,
        target_shift: f.target_shift,
        metadata: f.metadata,
    })
}

pub fn save_model(model: &RioModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model_to_json(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<RioModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::stream_rng;
    use crate::exact_gp::predict_exact;
    use rand::Rng;

    fn dataset(n: usize, seed: u64) -> Dataset {
        let mut rng = stream_rng(seed, 31);
        let x = DMatrix::<f64>::from_fn(n, 2, |_, _| rng.random_range(-3.0..3.0));
        let y = DVector::from_fn(n, |i, _| (x[(i, 0)]).sin() * 3.0 + x[(i, 1)] + 0.2 * rng.random_range(-1.0..1.0));
        Dataset::new("toy", x, y, vec!["a".into(), "b".into()]).unwrap()
    }

    fn imperfect(ds: &Dataset, idx: &[usize]) -> Vec<f64> {
        idx.iter().map(|&i| ds.features[(i, 1)] + 0.8 * ds.features[(i, 0)]).collect()
    }

    #[test]
    fn residual_arithmetic() {
        assert_eq!(compute_residuals(&[3.0, 6.0], &[2.5, 7.0]).unwrap(), vec![0.5, -1.0]);
        assert_eq!(compute_residuals(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(compute_residuals(&[1.0], &[1.0, 2.0]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert_eq!("Y+I".parse::<Variant>().unwrap(), Variant::SVGP);
        assert!("r+x".parse::<Variant>().is_err());
        assert!(!Variant::SVGP.needs_predictions());
        assert!(Variant::R_I.needs_predictions() && Variant::Y_O.needs_predictions());
    }

    #[test]
    fn missing_predictions_are_rejected() {
        let ds = dataset(20, 0);
        let idx: Vec<usize> = (0..20).collect();
        let err = train(Variant::R_I, &ds, &idx, None, &GpConfig::default()).unwrap_err();
        assert!(matches!(err, Error::MissingPredictions(ref v) if v == "r+i"));
        let m = train(Variant::SVGP, &ds, &idx, None, &GpConfig { inducing: 5, ..GpConfig::default() }).unwrap();
        assert!(calibrate(&m, &[0.0, 0.0], None).is_ok());
        let preds = imperfect(&ds, &idx);
        let rio = train(Variant::RIO, &ds, &idx, Some(&preds), &GpConfig { inducing: 5, ..GpConfig::default() }).unwrap();
        assert!(matches!(calibrate(&rio, &[0.0, 0.0], None), Err(Error::MissingPredictions(_))));
    }

    #[test]
    fn perfect_base_model_leaves_predictions_unchanged() {
        let ds = dataset(40, 1);
        let idx: Vec<usize> = (0..30).collect();
        let preds: Vec<f64> = idx.iter().map(|&i| ds.targets[i]).collect();
        let cfg = GpConfig { inducing: 10, ..GpConfig::default() };
        let m = train(Variant::RIO, &ds, &idx, Some(&preds), &cfg).unwrap();
        assert!((m.gp.params().log_noise - crate::kernels::MIN_NOISE_VARIANCE.ln()).abs() < 1e-9);
        for i in 30..40 {
            let row: Vec<f64> = ds.features.row(i).iter().copied().collect();
            let g = calibrate(&m, &row, Some(ds.targets[i] + 0.3)).unwrap();
            assert!((g.mean - ds.targets[i] - 0.3).abs() < 1e-6);
        }
    }

    #[test]
    fn svgp_ignores_base_predictions() {
        let ds = dataset(40, 2);
        let idx: Vec<usize> = (0..40).collect();
        let cfg = GpConfig { inducing: 8, max_iters: 200, ..GpConfig::default() };
        let p1 = imperfect(&ds, &idx);
        let p2: Vec<f64> = p1.iter().map(|v| v * 3.0 - 1.0).collect();
        let a = train(Variant::SVGP, &ds, &idx, Some(&p1), &cfg).unwrap();
        let b = train(Variant::SVGP, &ds, &idx, Some(&p2), &cfg).unwrap();
        let mut ja = model_to_json(&a);
        let mut jb = model_to_json(&b);
        for j in [&mut ja, &mut jb] {
            let mut v: Value = serde_json::from_str(j).unwrap();
            v["metadata"]["fit_wall_time_sec"] = Value::from(0.0);
            *j = v.to_string();
        }
        assert_eq!(ja, jb);
    }

    #[test]
    fn single_point_exact_model() {
        let x = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let ds = Dataset::new("one", x, DVector::from_vec(vec![2.0, 0.0]), vec!["x".into()]).unwrap();
        let m = train(Variant::R_I, &ds, &[0, 1], Some(&[1.0, 0.0]), &GpConfig { backend: Backend::Exact, ..GpConfig::default() })
            .unwrap();
        let GpModel::Exact(gp) = &m.gp else { panic!() };
        // Recondition on one point: mean = ŷ + σ²r/(σ²+σ_n²).
        let one = ExactGpModel::condition(&gp.params, &gp.selector, &gp.train.select(&[0]), &[1.0]).unwrap();
        let single = RioModel { gp: GpModel::Exact(one), ..m.clone() };
        let s2 = gp.params.log_sigma2_in.exp();
        let sn = gp.params.noise();
        let g = calibrate(&single, &[0.0], Some(5.0)).unwrap();
        assert!((g.mean - (5.0 + s2 * 1.0 / (s2 + sn))).abs() < 1e-12);
    }

    #[test]
    fn calibrated_mean_decomposes_into_base_plus_residual_mean() {
        let ds = dataset(40, 3);
        let idx: Vec<usize> = (0..30).collect();
        let preds = imperfect(&ds, &idx);
        let m = train(Variant::RIO, &ds, &idx, Some(&preds), &GpConfig { backend: Backend::Exact, ..GpConfig::default() })
            .unwrap();
        let GpModel::Exact(gp) = &m.gp else { panic!() };
        let ys = m.yhat_standardizer.as_ref().unwrap();
        for i in 30..40 {
            let row: Vec<f64> = ds.features.row(i).iter().copied().collect();
            let yh = ds.features[(i, 1)] + 0.8 * ds.features[(i, 0)];
            let g = calibrate(&m, &row, Some(yh)).unwrap();
            let z = m.standardizer.transform_row(&row).unwrap();
            let r = predict_exact(gp, &z, ys.transform_scalar(yh)).unwrap();
            assert!((g.mean - yh - r.mean).abs() < 1e-10);
            assert_eq!(g.outcome_variance, r.outcome_variance);
        }
    }

    #[test]
    fn save_load_round_trip() {
        let ds = dataset(50, 4);
        let idx: Vec<usize> = (0..40).collect();
        let preds = imperfect(&ds, &idx);
        let dir = tempfile::tempdir().unwrap();
        for backend in [Backend::Sparse, Backend::Exact] {
            let cfg = GpConfig { backend, inducing: 12, ..GpConfig::default() };
            let m = train(Variant::RIO, &ds, &idx, Some(&preds), &cfg).unwrap();
            let path = dir.path().join("m.rio");
            save_model(&m, &path).unwrap();
            let back = load_model(&path).unwrap();
            let mut rng = stream_rng(9, 9);
            for _ in 0..10 {
                let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
                let yh = rng.random_range(-4.0..4.0);
                assert_eq!(calibrate(&m, &x, Some(yh)).unwrap(), calibrate(&back, &x, Some(yh)).unwrap());
            }
            let text = fs::read_to_string(&path).unwrap();
            let v2 = text.replacen("\"format_version\": 1", "\"format_version\": 2", 1);
            assert!(matches!(model_from_json(&v2), Err(Error::Version { found: 2, .. })));
            assert!(matches!(model_from_json(&text[..text.len() * 2 / 3]), Err(Error::Corrupted(_))));
        }
    }
}
