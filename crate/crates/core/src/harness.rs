//! Multi-seed benchmark orchestration, synthetic data generators and the
//! empirical theory checks.
//!
//! Every trial is a pure function of `(config, trial seed)`: one split and
//! one base network per trial, shared by all variants. Trials run on a
//! dedicated thread pool and are collected in run order, so the report does
//! not depend on the worker count.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_io::{load_dataset, split, stream_rng, Dataset, SplitIndices, TargetColumn};
use crate::error::{Error, Result};
use crate::kernels::{GpInputs, KernelParams, KernelSelector};
use crate::linalg::cholesky_with_jitter;
use crate::metrics::{self, evaluate, paired_tests, MetricReport, PairedTests, Spearman, COVERAGE_LEVELS};
use crate::exact_gp::lml_with_gradient;
use crate::hyperopt::check_gradient;
use crate::mlp::{train_mlp, MlpConfig, MlpNetwork};
use crate::sparse_gp::{active_coords, sparse_bound_with_gradient};
use crate::rio::{calibrate_batch, train, GpConfig, Variant};

pub const REPORT_FORMAT_VERSION: u32 = 1;
const SYNTH_STREAM: u64 = 0x7379_6e74;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    /// Draw from a GP prior (unit RBF, isotropic) on `U[-2, 2]^d` plus noise.
    Gp { d: usize, noise_std: f64 },
    /// Six features on `[0, 1]`, steeply growing response in the last one.
    YachtLike,
    /// `sin(x) + x/3` on `[-3, 3]` plus noise 0.1.
    Sine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// Delimited file; `target` defaults to the last column.
    File { path: PathBuf, target: Option<String> },
    Synthetic { generator: Generator, n: usize },
}

impl DataSource {
    pub fn load(&self, seed: u64) -> Result<Dataset> {
        match self {
            DataSource::File { path, target } => {
                let t = target.as_deref().map(TargetColumn::from).unwrap_or(TargetColumn::Last);
                load_dataset(path, &t)
            }
            DataSource::Synthetic { generator, n } => synthetic(*generator, *n, seed),
        }
    }
}

pub fn synthetic(generator: Generator, n: usize, seed: u64) -> Result<Dataset> {
    let mut rng = stream_rng(seed, SYNTH_STREAM);
    let (x, y) = match generator {
        Generator::Gp { d, noise_std } => {
            if d == 0 {
                return Err(Error::invalid("generator needs d >= 1"));
            }
            let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0));
            let f = sample_gp_prior(&x, &mut rng)?;
            let y = DVector::from_fn(n, |i, _| f[i] + noise_std * rng.sample::<f64, _>(StandardNormal));
            (x, y)
        }
        Generator::YachtLike => {
            let x = DMatrix::<f64>::from_fn(n, 6, |_, _| rng.random_range(0.0..1.0));
            let y = DVector::from_fn(n, |i, _| {
                let u = |k: usize| -> f64 { x[(i, k)] };
                40.0 * u(5).powi(4) + 2.0 * (3.0 * u(0)).sin() + u(1) * u(2) + 0.5 * rng.sample::<f64, _>(StandardNormal)
            });
            (x, y)
        }
        Generator::Sine => {
            let x = DMatrix::from_fn(n, 1, |_, _| rng.random_range(-3.0..3.0));
            let y = DVector::from_fn(n, |i, _| sine_truth(x[(i, 0)]) + 0.1 * rng.sample::<f64, _>(StandardNormal));
            (x, y)
        }
    };
    let names = (0..x.ncols()).map(|k| format!("x{k}")).collect();
    Dataset::new(format!("synthetic-{}", generator_name(&generator)), x, y, names)
}

fn generator_name(g: &Generator) -> &'static str {
    match g {
        Generator::Gp { .. } => "gp",
        Generator::YachtLike => "yacht-like",
        Generator::Sine => "sine",
    }
}

fn sine_truth(x: f64) -> f64 {
    x.sin() + x / 3.0
}

fn sample_gp_prior(x: &DMatrix<f64>, rng: &mut impl Rng) -> Result<DVector<f64>> {
    let pts = GpInputs::from_features(x);
    let p = KernelParams::from_natural(1.0, &[1.0], 1.0, 1.0, 1e-6);
    let k = crate::kernels::gram(&p, &KernelSelector::INPUT, &pts, &pts)?;
    let l = cholesky_with_jitter(&k, 1e-8)?.l();
    let z = DVector::from_fn(x.nrows(), |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok(l * z)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub data: DataSource,
    pub variants: Vec<Variant>,
    pub runs: usize,
    pub seed: u64,
    pub test_frac: f64,
    pub val_frac: f64,
    pub gp: GpConfig,
    pub nn: MlpConfig,
    pub workers: usize,
    pub output: Option<PathBuf>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            data: DataSource::Synthetic { generator: Generator::YachtLike, n: 308 },
            variants: Variant::ALL.to_vec(),
            runs: 10,
            seed: 0,
            test_frac: 0.2,
            val_frac: 0.2,
            gp: GpConfig::default(),
            nn: MlpConfig::default(),
            workers: 1,
            output: None,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::invalid("runs must be >= 1"));
        }
        if self.variants.is_empty() {
            return Err(Error::invalid("variants must be non-empty"));
        }
        if self.workers == 0 {
            return Err(Error::invalid("workers must be >= 1"));
        }
        if !(self.val_frac > 0.0) {
            return Err(Error::invalid("val_frac must be positive: the base network needs a validation part"));
        }
        Ok(())
    }
}

/// SplitMix64 finalizer, used to derive independent trial seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn trial_seed(base: u64, run: usize) -> u64 {
    mix(base ^ mix(run as u64))
}

/// Inputs shared by every variant of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialInputs {
    pub seed: u64,
    pub split: SplitIndices,
    /// Base-network output for every dataset row.
    pub nn_predictions: Vec<f64>,
}

pub fn prepare_trial(ds: &Dataset, seed: u64, cfg: &BenchConfig) -> Result<TrialInputs> {
    let split = split(ds.n(), seed, cfg.test_frac, cfg.val_frac)?;
    let nn_cfg = MlpConfig { seed, ..cfg.nn.clone() };
    let net = train_mlp(ds, &split, &nn_cfg)?;
    let nn_predictions = net.predict(&ds.features)?;
    Ok(TrialInputs { seed, split, nn_predictions })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantTrial {
    pub variant: Variant,
    pub metrics: Option<MetricReport>,
    pub mean_predictive_std: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub run: usize,
    pub seed: u64,
    pub n_train: usize,
    pub n_validation: usize,
    pub n_test: usize,
    pub nn_rmse: Option<f64>,
    pub variants: Vec<VariantTrial>,
    pub error: Option<String>,
}

fn rows_of(v: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| v[i]).collect()
}

pub fn run_variant(ds: &Dataset, inputs: &TrialInputs, variant: Variant, gp: &GpConfig) -> VariantTrial {
    let outcome = (|| -> Result<(MetricReport, f64)> {
        let s = &inputs.split;
        let gp_cfg = GpConfig { seed: inputs.seed, ..gp.clone() };
        let start = Instant::now();
        let model = train(variant, ds, &s.train, Some(&rows_of(&inputs.nn_predictions, &s.train)), &gp_cfg)?;
        let wall = start.elapsed().as_secs_f64();
        let nn_test = rows_of(&inputs.nn_predictions, &s.test);
        let yhat = variant.needs_predictions().then_some(nn_test.as_slice());
        let g = calibrate_batch(&model, &ds.feature_rows(&s.test), yhat)?;
        let y = rows_of(ds.targets.as_slice(), &s.test);
        let m = evaluate(&g, &y, Some(&nn_test), model.noise_variance(), wall)?;
        let sd = g.iter().map(|p| p.std()).sum::<f64>() / g.len() as f64;
        Ok((m, sd))
    })();
    match outcome {
        Ok((m, sd)) => VariantTrial { variant, metrics: Some(m), mean_predictive_std: Some(sd), error: None },
        Err(e) => VariantTrial { variant, metrics: None, mean_predictive_std: None, error: Some(e.to_string()) },
    }
}

/// One trial: shared split and base network, then every variant.
/// Component failures are recorded in the report rather than returned.
pub fn run_trial(ds: &Dataset, run: usize, seed: u64, variants: &[Variant], cfg: &BenchConfig) -> TrialReport {
    let mut report = TrialReport {
        run,
        seed,
        n_train: 0,
        n_validation: 0,
        n_test: 0,
        nn_rmse: None,
        variants: Vec::new(),
        error: None,
    };
    let inputs = match prepare_trial(ds, seed, cfg) {
        Ok(i) => i,
        Err(e) => {
            report.error = Some(e.to_string());
            report.variants = variants
                .iter()
                .map(|&v| VariantTrial { variant: v, metrics: None, mean_predictive_std: None, error: Some(format!("base network: {e}")) })
                .collect();
            return report;
        }
    };
    let s = &inputs.split;
    report.n_train = s.train.len();
    report.n_validation = s.validation.len();
    report.n_test = s.test.len();
    let y = rows_of(ds.targets.as_slice(), &s.test);
    report.nn_rmse = metrics::rmse(&rows_of(&inputs.nn_predictions, &s.test), &y).ok();
    report.variants = variants.iter().map(|&v| run_variant(ds, &inputs, v, &cfg.gp)).collect();
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub count: usize,
}

impl MeanStd {
    pub fn of(v: &[f64]) -> Option<Self> {
        if v.is_empty() {
            return None;
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        Some(Self { mean, std, count: v.len() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantAggregate {
    pub variant: Variant,
    pub failures: usize,
    pub metrics: BTreeMap<String, MeanStd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    /// Column compared against RIO (a variant name or `"nn"`).
    pub against: String,
    pub metric: String,
    pub tests: Option<PairedTests>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub format_version: u32,
    pub software_version: String,
    pub dataset: String,
    pub config: BenchConfig,
    pub nn_rmse: Option<MeanStd>,
    pub aggregates: Vec<VariantAggregate>,
    pub significance: Vec<Significance>,
    pub runs: Vec<TrialReport>,
    pub errors: Vec<String>,
}

fn metric_values(m: &MetricReport) -> Vec<(String, Option<f64>)> {
    let mut out = vec![("rmse".to_string(), Some(m.rmse)), ("nlpd".to_string(), Some(m.nlpd))];
    for level in COVERAGE_LEVELS {
        let key = metrics::level_key(level);
        out.push((format!("ci_{key}"), m.ci_coverage.get(&key).copied()));
    }
    out.push(("improvement_ratio".into(), m.improvement_ratio));
    out.push(("noise_variance".into(), Some(m.noise_variance)));
    out.push(("wall_time_sec".into(), Some(m.wall_time_sec)));
    out
}

fn per_run(runs: &[TrialReport], v: Variant, metric: &str) -> Vec<Option<f64>> {
    runs.iter()
        .map(|r| {
            r.variants
                .iter()
                .find(|t| t.variant == v)
                .and_then(|t| t.metrics.as_ref())
                .and_then(|m| metric_values(m).into_iter().find(|(k, _)| k == metric).and_then(|(_, x)| x))
        })
        .collect()
}

fn paired(a: &[Option<f64>], b: &[Option<f64>]) -> (Vec<f64>, Vec<f64>) {
    a.iter().zip(b).filter_map(|(x, y)| Some(((*x)?, (*y)?))).unzip()
}

pub fn aggregate(dataset: &str, config: &BenchConfig, runs: Vec<TrialReport>) -> BenchmarkReport {
    let mut errors = Vec::new();
    for r in &runs {
        if let Some(e) = &r.error {
            errors.push(format!("run {}: {e}", r.run));
        }
        for t in &r.variants {
            if let Some(e) = &t.error {
                errors.push(format!("run {} {}: {e}", r.run, t.variant));
            }
        }
    }
    let aggregates = config
        .variants
        .iter()
        .map(|&v| {
            let failures = runs
                .iter()
                .filter(|r| r.variants.iter().any(|t| t.variant == v && t.metrics.is_none()))
                .count();
            let mut metrics = BTreeMap::new();
            for key in ["rmse", "nlpd", "ci_0.95", "ci_0.90", "ci_0.68", "improvement_ratio", "noise_variance", "wall_time_sec"] {
                let vals: Vec<f64> = per_run(&runs, v, key).into_iter().flatten().collect();
                if let Some(ms) = MeanStd::of(&vals) {
                    metrics.insert(key.to_string(), ms);
                }
            }
            VariantAggregate { variant: v, failures, metrics }
        })
        .collect();

    let nn: Vec<Option<f64>> = runs.iter().map(|r| r.nn_rmse).collect();
    let mut significance = Vec::new();
    if config.variants.contains(&Variant::RIO) {
        let test = |against: String, metric: &str, a: &[Option<f64>], b: &[Option<f64>]| {
            let (x, y) = paired(a, b);
            match paired_tests(&x, &y) {
                Ok(t) => Significance { against, metric: metric.into(), tests: Some(t), note: None },
                Err(e) => Significance { against, metric: metric.into(), tests: None, note: Some(e.to_string()) },
            }
        };
        let rio_rmse = per_run(&runs, Variant::RIO, "rmse");
        significance.push(test("nn".into(), "rmse", &rio_rmse, &nn));
        for &v in config.variants.iter().filter(|v| **v != Variant::RIO) {
            for metric in ["rmse", "nlpd"] {
                significance.push(test(v.name().into(), metric, &per_run(&runs, Variant::RIO, metric), &per_run(&runs, v, metric)));
            }
        }
    }
    let nn_vals: Vec<f64> = nn.into_iter().flatten().collect();
    BenchmarkReport {
        format_version: REPORT_FORMAT_VERSION,
        software_version: env!("CARGO_PKG_VERSION").to_string(),
        dataset: dataset.to_string(),
        config: config.clone(),
        nn_rmse: MeanStd::of(&nn_vals),
        aggregates,
        significance,
        runs,
        errors,
    }
}

pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchmarkReport> {
    cfg.validate()?;
    let ds = cfg.data.load(cfg.seed)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let runs: Vec<TrialReport> = pool.install(|| {
        (0..cfg.runs)
            .into_par_iter()
            .map(|r| run_trial(&ds, r, trial_seed(cfg.seed, r), &cfg.variants, cfg))
            .collect()
    });
    let report = aggregate(&ds.name, cfg, runs);
    if let Some(out) = &cfg.output {
        write_report(&report, out)?;
    }
    Ok(report)
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

/// One row per run × column. Wall time is omitted so that the table is a
/// pure function of the configuration.
pub fn raw_metric_table(report: &BenchmarkReport) -> String {
    let mut s = String::from("run,seed,variant,status,rmse,nlpd,ci_0.95,ci_0.90,ci_0.68,improvement_ratio,noise_variance\n");
    for r in &report.runs {
        let status = if r.error.is_some() { "error" } else { "ok" };
        let _ = writeln!(s, "{},{},nn,{status},{},,,,,,", r.run, r.seed, cell(r.nn_rmse));
        for t in &r.variants {
            match &t.metrics {
                Some(m) => {
                    let vals: Vec<String> = metric_values(m)
                        .into_iter()
                        .filter(|(k, _)| k != "wall_time_sec")
                        .map(|(_, v)| cell(v))
                        .collect();
                    let _ = writeln!(s, "{},{},{},ok,{}", r.run, r.seed, t.variant, vals.join(","));
                }
                None => {
                    let _ = writeln!(s, "{},{},{},error,,,,,,,", r.run, r.seed, t.variant);
                }
            }
        }
    }
    s
}

pub fn table_path(report_path: &Path) -> PathBuf {
    report_path.with_extension("csv")
}

/// Writes the JSON report to `path` and the raw-metric table next to it.
pub fn write_report(report: &BenchmarkReport, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    fs::write(path, json).map_err(|e| Error::io(path, e))?;
    let t = table_path(path);
    fs::write(&t, raw_metric_table(report)).map_err(|e| Error::io(&t, e))
}

const SCENARIO_N: usize = 300;
const SCENARIO_TRAIN: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSide {
    pub residual_variance: f64,
    pub mean_predictive_std: f64,
    pub noise_variance: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Figure2Outcome {
    pub seed: u64,
    pub good: ScenarioSide,
    pub bad: ScenarioSide,
}

/// 1-d task whose truth carries fine structure next to a smooth trend. The
/// accurate base predictor matches the truth; the other one adds a seeded
/// high-frequency sinusoidal perturbation. RIO is fitted to both.
pub fn figure2_scenario(seed: u64) -> Result<Figure2Outcome> {
    let mut rng = stream_rng(seed, 0x6669_6732);
    let fine = |rng: &mut rand_chacha::ChaCha8Rng| -> (f64, f64, f64) {
        (rng.random_range(0.4..0.6), rng.random_range(15.0..25.0), rng.random_range(0.0..std::f64::consts::TAU))
    };
    let (ta, tf, tp) = fine(&mut rng);
    let (pa, pf, pp) = fine(&mut rng);
    let x: Vec<f64> = (0..SCENARIO_N).map(|_| rng.random_range(-3.0..3.0)).collect();
    let good: Vec<f64> = x.iter().map(|&v| sine_truth(v) + ta * (tf * v + tp).sin()).collect();
    let y: Vec<f64> = good.iter().map(|g| g + 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
    let bad: Vec<f64> = x.iter().zip(&good).map(|(&v, g)| g + pa * (pf * v + pp).sin()).collect();
    let ds = Dataset::new(
        "perturbed-sine".to_string(),
        DMatrix::from_column_slice(SCENARIO_N, 1, &x),
        DVector::from_vec(y),
        vec!["x0".to_string()],
    )?;
    let train_idx: Vec<usize> = (0..SCENARIO_TRAIN).collect();
    let test_idx: Vec<usize> = (SCENARIO_TRAIN..SCENARIO_N).collect();
    let y_test = rows_of(ds.targets.as_slice(), &test_idx);
    let gp = GpConfig { seed, ..GpConfig::default() };
    let side = |base: &[f64]| -> Result<ScenarioSide> {
        let tr = rows_of(base, &train_idx);
        let res = crate::rio::compute_residuals(&rows_of(ds.targets.as_slice(), &train_idx), &tr)?;
        let mean = res.iter().sum::<f64>() / res.len() as f64;
        let residual_variance = res.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / res.len() as f64;
        let model = train(Variant::RIO, &ds, &train_idx, Some(&tr), &gp)?;
        let g = calibrate_batch(&model, &ds.feature_rows(&test_idx), Some(&rows_of(base, &test_idx)))?;
        let means: Vec<f64> = g.iter().map(|p| p.mean).collect();
        Ok(ScenarioSide {
            residual_variance,
            mean_predictive_std: g.iter().map(|p| p.std()).sum::<f64>() / g.len() as f64,
            noise_variance: model.noise_variance(),
            rmse: metrics::rmse(&means, &y_test)?,
        })
    };
    Ok(Figure2Outcome { seed, good: side(&good)?, bad: side(&bad)? })
}

/// Spearman correlation between per-variant test RMSE and fitted noise
/// variance within one trial.
pub fn rank_correlation_trial(ds: &Dataset, seed: u64, cfg: &BenchConfig) -> Result<Spearman> {
    let inputs = prepare_trial(ds, seed, cfg)?;
    let mut rmse = Vec::new();
    let mut noise = Vec::new();
    for &v in &cfg.variants {
        let t = run_variant(ds, &inputs, v, &cfg.gp);
        let m = t.metrics.ok_or_else(|| Error::Numerical(t.error.unwrap_or_default()))?;
        rmse.push(m.rmse);
        noise.push(m.noise_variance);
    }
    metrics::spearman(&rmse, &noise)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Record {
    pub n: usize,
    pub sigma_g: f64,
    pub epsilon: f64,
    pub v_norm: f64,
    /// `max_x* max_i |w(x*)_i − w(x*)_{n+i}|` on the probe grid.
    pub max_weight_gap: f64,
    pub weight_threshold: f64,
    /// `max_x* |f̄(x*) − h̄(x*)|` on the probe grid.
    pub max_prediction_gap: f64,
    /// Mean of g² over the 2n construction points.
    pub mean_g_squared: f64,
    pub probe_points: usize,
    pub passed: bool,
}

const LEMMA1_NOISE: f64 = 0.01;
const LEMMA1_GRID: usize = 10;

struct Lemma1Setup {
    base: Vec<[f64; 2]>,
    direction: [f64; 2],
    probes: Vec<[f64; 2]>,
}

impl Lemma1Setup {
    fn new(n: usize, seed: u64) -> Self {
        let mut rng = stream_rng(seed, 0x6c65_6d31);
        let base = (0..n).map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect();
        let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let probes = (0..LEMMA1_GRID * LEMMA1_GRID)
            .map(|k| {
                let t = |j: usize| -2.5 + 5.0 * j as f64 / (LEMMA1_GRID - 1) as f64;
                [t(k / LEMMA1_GRID), t(k % LEMMA1_GRID)]
            })
            .collect();
        Self { base, direction: [a.cos(), a.sin()], probes }
    }

    fn points(&self, v_norm: f64) -> Vec<[f64; 2]> {
        let shifted = self.base.iter().map(|p| [p[0] + v_norm * self.direction[0], p[1] + v_norm * self.direction[1]]);
        self.base.iter().copied().chain(shifted).collect()
    }

    /// Rows: probe points; columns: GP weights on the 2n training points.
    fn weights(&self, v_norm: f64) -> Result<DMatrix<f64>> {
        let pts = self.points(v_norm);
        let m = pts.len();
        let k = |a: &[f64; 2], b: &[f64; 2]| (-0.5 * ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2))).exp();
        let mut ky = DMatrix::from_fn(m, m, |i, j| k(&pts[i], &pts[j]));
        for i in 0..m {
            ky[(i, i)] += LEMMA1_NOISE;
        }
        let chol = cholesky_with_jitter(&ky, 0.0)?.chol;
        let kstar = DMatrix::from_fn(m, self.probes.len(), |i, j| k(&pts[i], &self.probes[j]));
        Ok(chol.solve(&kstar).transpose())
    }

    fn weight_gap(&self, w: &DMatrix<f64>) -> f64 {
        let n = self.base.len();
        let mut gap: f64 = 0.0;
        for r in 0..w.nrows() {
            for i in 0..n {
                gap = gap.max((w[(r, i)] - w[(r, n + i)]).abs());
            }
        }
        gap
    }
}

/// Paired-point construction of an ε-indistinguishable signal for a GP
/// with fixed unit RBF kernel (l = 1) and noise variance 0.01 in 2-d.
///
/// Points `x_{n+i} = x_i + v` carry `g = +σ_g` and `g = −σ_g`. `‖v‖` is the
/// largest value in `[1e-12, 1e-3]` (found by log-scale bisection) for which every
/// pairwise weight gap stays below `ε / (n σ_g)` on a 10×10 probe grid;
/// both GP posterior means, with and without `g`, are then compared there.
pub fn lemma1_check(n: usize, sigma_g: f64, epsilon: f64, seed: u64) -> Result<Lemma1Record> {
    if n < 2 || !(sigma_g > 0.0) || !(epsilon > 0.0) {
        return Err(Error::invalid("lemma1_check needs n >= 2 and positive sigma_g, epsilon"));
    }
    let setup = Lemma1Setup::new(n, seed);
    let threshold = epsilon / (n as f64 * sigma_g);
    let ok = |v: f64| -> Result<bool> { Ok(setup.weight_gap(&setup.weights(v)?) < threshold) };
    let (lo_b, hi_b) = (1e-12f64, 1e-3f64);
    let v_norm = if ok(hi_b)? {
        hi_b
    } else if !ok(lo_b)? {
        return Err(Error::Numerical(format!("no ‖v‖ in [{lo_b:e}, {hi_b:e}] satisfies the weight condition")));
    } else {
        let (mut lo, mut hi) = (lo_b.ln(), hi_b.ln());
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if ok(mid.exp())? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo.exp()
    };
    lemma1_evaluate(&setup, n, sigma_g, epsilon, v_norm)
}

/// Evaluates the construction at a given `‖v‖` (including 0).
pub fn lemma1_at(n: usize, sigma_g: f64, epsilon: f64, v_norm: f64, seed: u64) -> Result<Lemma1Record> {
    lemma1_evaluate(&Lemma1Setup::new(n, seed), n, sigma_g, epsilon, v_norm)
}

fn lemma1_evaluate(setup: &Lemma1Setup, n: usize, sigma_g: f64, epsilon: f64, v_norm: f64) -> Result<Lemma1Record> {
    let pts = setup.points(v_norm);
    let h: DVector<f64> = DVector::from_iterator(pts.len(), pts.iter().map(|p| p[0].sin() + 0.5 * p[1]));
    let g = DVector::from_fn(2 * n, |i, _| if i < n { sigma_g } else { -sigma_g });
    let f = &h + &g;
    let w = setup.weights(v_norm)?;
    let fbar = &w * &f;
    let hbar = &w * &h;
    let max_prediction_gap = (fbar - hbar).amax();
    let max_weight_gap = setup.weight_gap(&w);
    let threshold = epsilon / (n as f64 * sigma_g);
    Ok(Lemma1Record {
        n,
        sigma_g,
        epsilon,
        v_norm,
        max_weight_gap,
        weight_threshold: threshold,
        max_prediction_gap,
        mean_g_squared: g.norm_squared() / (2 * n) as f64,
        probe_points: setup.probes.len(),
        passed: max_weight_gap < threshold && max_prediction_gap < epsilon,
    })
}

/// Worst relative disagreement between analytic gradients and central
/// differences over a batch of random small instances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientSuite {
    pub instances: usize,
    pub lml: f64,
    pub sparse_bound: f64,
    pub mlp: f64,
}

impl GradientSuite {
    pub fn passes(&self, tol: f64) -> bool {
        self.lml < tol && self.sparse_bound < tol && self.mlp < tol
    }
}

/// Minimum distance between inducing points in the active coordinates;
/// near-coincident pairs leave K_mm too ill-conditioned for a finite-difference reference.
const MIN_INDUCING_GAP: f64 = 0.1;

fn gradient_instance(n: usize, d: usize, seed: u64) -> (GpInputs, Vec<f64>) {
    let mut rng = stream_rng(seed, 77);
    let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
    let yh: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let y: Vec<f64> = (0..n).map(|i| (1.3 * x[i * d]).sin() + 0.4 * yh[i] + 0.2 * rng.random_range(-1.0..1.0)).collect();
    (GpInputs::from_parts(d, x, yh).expect("consistent sizes"), y)
}

fn separated_inducing(m: usize, d: usize, sel: &KernelSelector, seed: u64) -> GpInputs {
    let coords = active_coords(sel, d);
    let gap = |z: &GpInputs, i: usize, j: usize| coords.iter().map(|&c| (z.coord(i, c) - z.coord(j, c)).powi(2)).sum::<f64>().sqrt();
    (0..)
        .map(|k| gradient_instance(m, d, seed + 1000 * k).0)
        .find(|z| (0..m).all(|i| (0..i).all(|j| gap(z, i, j) >= MIN_INDUCING_GAP)))
        .expect("unbounded search")
}

/// Checks the exact LML, the collapsed sparse bound (hyperparameters, noise
/// and inducing coordinates jointly) and MLP backpropagation on `instances`
/// seeded problems each, cycling through kernel selectors and ARD.
pub fn gradient_suite(instances: usize) -> Result<GradientSuite> {
    let mut out = GradientSuite { instances, lml: 0.0, sparse_bound: 0.0, mlp: 0.0 };
    for seed in 0..instances as u64 {
        let d = 1 + seed as usize % 3;
        let sel = [KernelSelector::IO, KernelSelector::INPUT, KernelSelector::OUTPUT][seed as usize % 3].with_ard(seed % 2 == 0);
        let (pts, y) = gradient_instance(12, d, 500 + seed);
        let mut rng = stream_rng(500 + seed, 78);
        let ls: Vec<f64> = (0..if sel.ard { d } else { 1 }).map(|_| rng.random_range(0.3..3.0)).collect();
        let p = KernelParams::from_natural(
            rng.random_range(0.2..3.0),
            &ls,
            rng.random_range(0.2..3.0),
            rng.random_range(0.3..3.0),
            rng.random_range(0.01..0.5),
        );
        let theta = p.to_vec(&sel);
        let lml = |v: &[f64]| {
            lml_with_gradient(&p.with_vec(&sel, v), &sel, &pts, &y).unwrap_or_else(|_| (f64::NAN, vec![f64::NAN; v.len()]))
        };
        out.lml = out.lml.max(check_gradient(lml, &theta, 1e-5)?);

        let z0 = separated_inducing(4, d, &sel, 900 + seed);
        let nh = theta.len();
        let mut x0 = theta.clone();
        for i in 0..z0.len() {
            x0.extend((0..=d).map(|k| z0.coord(i, k)));
        }
        let bound = |v: &[f64]| {
            let mut z = z0.clone();
            for i in 0..z.len() {
                for k in 0..=d {
                    *z.coord_mut(i, k) = v[nh + i * (d + 1) + k];
                }
            }
            match sparse_bound_with_gradient(&p.with_vec(&sel, &v[..nh]), &sel, &z, &pts, &y) {
                Ok(b) => {
                    let mut g = b.kernel;
                    g.push(b.log_noise);
                    g.extend(b.inducing.transpose().iter());
                    (b.value, g)
                }
                Err(_) => (f64::NAN, vec![f64::NAN; v.len()]),
            }
        };
        out.sparse_bound = out.sparse_bound.max(check_gradient(bound, &x0, 1e-5)?);

        let mut rng = stream_rng(seed, 79);
        let din = 1 + seed as usize % 4;
        let sizes = [din, 1 + seed as usize % 8, 1 + (seed as usize / 3) % 8, 1];
        let mut net = MlpNetwork::glorot(&sizes, &mut rng)?;
        for b in &mut net.biases {
            b.iter_mut().for_each(|v| *v = rng.random_range(-0.3..0.3));
        }
        let xs = DMatrix::from_fn(10, din, |_, _| rng.random_range(-2.0..2.0));
        let ys: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mlp = |t: &[f64]| {
            let mut m = net.clone();
            m.set_flat(t);
            m.loss_and_gradient(&xs, &ys).unwrap_or_else(|_| (f64::NAN, vec![f64::NAN; t.len()]))
        };
        out.mlp = out.mlp.max(check_gradient(mlp, &net.to_flat(), 1e-6)?);
    }
    Ok(out)
}
