//! Acceptance suite. Prints one line per criterion and exits non-zero if any
//! criterion that ran did not pass.
//!
//! Criteria 4, 5 and 9 need the UCI yacht and energy-efficiency (heating
//! load) tables, supplied through `RIO_YACHT_DATA` and `RIO_ENB_DATA`: a
//! delimited file with a header row and the target in the last column. When
//! a file is absent the criterion is reported as NOT RUN.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::Rng;
use rio_core::data_io::stream_rng;
use rio_core::exact_gp::{log_marginal_likelihood, ExactGpModel};
use rio_core::harness::{
    figure2_scenario, gradient_suite, lemma1_check, rank_correlation_trial, run_benchmark, synthetic, table_path, trial_seed,
    BenchConfig, BenchmarkReport, DataSource, Generator,
};
use rio_core::kernels::{GpInputs, KernelParams, KernelSelector};
use rio_core::metrics::ci_coverage;
use rio_core::rio::{calibrate_batch, train, Backend, GpConfig, Variant};
use rio_core::sparse_gp::{sparse_bound, SparseGpModel};

const EQUIV_TOL: f64 = 1e-6;
const GRAD_TOL: f64 = 1e-4;
const GRAD_INSTANCES: usize = 50;
const BOUND_SLACK: f64 = 1e-6;
const BOUND_CONFIGS: usize = 100;
const DIRECTIONAL_RUNS: usize = 10;
const DIRECTIONAL_MIN: usize = 8;
const ENB_NLPD_MAX: f64 = 2.0;
const RHO_MIN: f64 = 0.6;
const RHO_REPS: usize = 10;
const RHO_MIN_REPS: usize = 7;
const MID_QUALITY_HIDDEN: [usize; 1] = [8];
const COVERAGE_TOL: f64 = 0.05;
const COVERAGE_N_TEST: usize = 2000;
const SPREAD_SEEDS: u64 = 20;
const SPREAD_MIN: usize = 18;
const IR_MIN: f64 = 0.5;

enum Outcome {
    Pass(String),
    Fail(String),
    NotRun(String),
}

type Criterion<'a> = (usize, &'static str, Duration, Box<dyn FnOnce() -> Outcome + 'a>);

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn timed(limit: Duration, f: impl FnOnce() -> Outcome) -> (Outcome, Duration) {
    let t = Instant::now();
    let out = f();
    let el = t.elapsed();
    let out = match out {
        Outcome::Pass(d) if el > limit => Outcome::Fail(format!("{d}; exceeded time limit {limit:?}")),
        o => o,
    };
    (out, el)
}

fn random_instance(n: usize, d: usize, seed: u64) -> (GpInputs, Vec<f64>) {
    let mut rng = stream_rng(seed, 77);
    let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
    let yh: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let y: Vec<f64> = (0..n).map(|i| (1.3 * x[i * d]).sin() + 0.4 * yh[i] + 0.2 * rng.random_range(-1.0..1.0)).collect();
    (GpInputs::from_parts(d, x, yh).unwrap(), y)
}

fn random_params(d: usize, ard: bool, seed: u64) -> KernelParams {
    let mut rng = stream_rng(seed, 78);
    let ls: Vec<f64> = (0..if ard { d } else { 1 }).map(|_| rng.random_range(0.3..3.0)).collect();
    KernelParams::from_natural(
        rng.random_range(0.2..3.0),
        &ls,
        rng.random_range(0.2..3.0),
        rng.random_range(0.3..3.0),
        rng.random_range(0.01..0.5),
    )
}

fn selector(seed: u64) -> KernelSelector {
    [KernelSelector::IO, KernelSelector::INPUT, KernelSelector::OUTPUT][seed as usize % 3].with_ard(seed.is_multiple_of(2))
}

fn c1_sparse_exact_equivalence() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let d = 1 + seed as usize % 3;
        let sel = selector(seed);
        let (pts, y) = random_instance(20, d, seed);
        let (test, _) = random_instance(10, d, 1000 + seed);
        let p = random_params(d, sel.ard, seed);
        let s = SparseGpModel::condition(&p, &sel, &pts, &pts, &y).unwrap();
        let e = ExactGpModel::condition(&p, &sel, &pts, &y).unwrap();
        for i in 0..test.len() {
            let a = s.predict(test.x(i), test.yhat(i)).unwrap();
            let b = e.predict(test.x(i), test.yhat(i)).unwrap();
            worst = worst.max((a.mean - b.mean).abs()).max((a.latent_variance - b.latent_variance).abs());
        }
        let gap = (sparse_bound(&p, &sel, &pts, &pts, &y).unwrap() - log_marginal_likelihood(&p, &sel, &pts, &y).unwrap()).abs();
        worst = worst.max(gap);
    }
    verdict(worst < EQUIV_TOL, format!("max deviation {worst:.2e} over 20 instances (tol {EQUIV_TOL:e})"))
}

fn c2_gradient_suite() -> Outcome {
    match gradient_suite(GRAD_INSTANCES) {
        Ok(g) => verdict(
            g.passes(GRAD_TOL),
            format!(
                "max relative error over {} instances each: lml {:.1e}, sparse bound {:.1e}, mlp {:.1e} (tol {GRAD_TOL:e})",
                g.instances, g.lml, g.sparse_bound, g.mlp
            ),
        ),
        Err(e) => Outcome::Fail(e.to_string()),
    }
}

fn c3_bound_property() -> Outcome {
    let mut worst = f64::NEG_INFINITY;
    for seed in 0..BOUND_CONFIGS as u64 {
        let mut rng = stream_rng(seed, 80);
        let n = rng.random_range(5..=200);
        let d = rng.random_range(1..=3);
        let sel = selector(seed);
        let (pts, y) = random_instance(n, d, 2000 + seed);
        let m = rng.random_range(1..=n.min(60));
        let (z, _) = random_instance(m, d, 3000 + seed);
        let p = random_params(d, sel.ard, 2000 + seed);
        let excess = sparse_bound(&p, &sel, &z, &pts, &y).unwrap() - log_marginal_likelihood(&p, &sel, &pts, &y).unwrap();
        worst = worst.max(excess);
    }
    verdict(worst <= BOUND_SLACK, format!("max(bound - lml) = {worst:.3e} over {BOUND_CONFIGS} configurations"))
}

fn directional_config(ds_path: PathBuf) -> BenchConfig {
    BenchConfig {
        data: DataSource::File { path: ds_path, target: None },
        variants: Variant::ALL.to_vec(),
        runs: DIRECTIONAL_RUNS,
        seed: 0,
        ..BenchConfig::default()
    }
}

fn per_run(report: &BenchmarkReport, v: Variant, f: impl Fn(&rio_core::metrics::MetricReport) -> Option<f64>) -> Vec<Option<f64>> {
    report
        .runs
        .iter()
        .map(|r| r.variants.iter().find(|t| t.variant == v).and_then(|t| t.metrics.as_ref()).and_then(&f))
        .collect()
}

fn count(a: &[Option<f64>], b: &[Option<f64>], pred: impl Fn(f64, f64) -> bool) -> usize {
    a.iter().zip(b).filter(|(x, y)| matches!((x, y), (Some(x), Some(y)) if pred(*x, *y))).count()
}

fn yacht_report() -> Option<Result<BenchmarkReport, String>> {
    let path = PathBuf::from(std::env::var_os("RIO_YACHT_DATA")?);
    Some(run_benchmark(&directional_config(path)).map_err(|e| e.to_string()))
}

fn c4_yacht(report: &Option<Result<BenchmarkReport, String>>) -> Outcome {
    let rep = match report {
        None => return Outcome::NotRun("RIO_YACHT_DATA not set; yacht table unavailable".into()),
        Some(Err(e)) => return Outcome::Fail(format!("benchmark failed: {e}")),
        Some(Ok(r)) => r,
    };
    let rio = per_run(rep, Variant::RIO, |m| Some(m.rmse));
    let nn: Vec<Option<f64>> = rep.runs.iter().map(|r| r.nn_rmse).collect();
    let rio_noise = per_run(rep, Variant::RIO, |m| Some(m.noise_variance));
    let svgp_noise = per_run(rep, Variant::SVGP, |m| Some(m.noise_variance));
    let a = count(&rio, &nn, |x, y| x < y);
    let b = count(&rio_noise, &svgp_noise, |x, y| x < y);
    verdict(
        a >= DIRECTIONAL_MIN && b >= DIRECTIONAL_MIN,
        format!("RIO rmse < NN rmse in {a}/{DIRECTIONAL_RUNS} runs, RIO noise < SVGP noise in {b}/{DIRECTIONAL_RUNS} runs"),
    )
}

fn c5_enb() -> Outcome {
    let Some(path) = std::env::var_os("RIO_ENB_DATA").map(PathBuf::from) else {
        return Outcome::NotRun("RIO_ENB_DATA not set; energy-efficiency table unavailable".into());
    };
    let rep = match run_benchmark(&directional_config(path)) {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(format!("benchmark failed: {e}")),
    };
    let rio = per_run(&rep, Variant::RIO, |m| Some(m.rmse));
    let nn: Vec<Option<f64>> = rep.runs.iter().map(|r| r.nn_rmse).collect();
    let a = count(&rio, &nn, |x, y| x < y);
    let nlpd: Vec<f64> = per_run(&rep, Variant::RIO, |m| Some(m.nlpd)).into_iter().flatten().collect();
    let mean_nlpd = nlpd.iter().sum::<f64>() / nlpd.len().max(1) as f64;
    verdict(
        a >= DIRECTIONAL_MIN && !nlpd.is_empty() && mean_nlpd < ENB_NLPD_MAX,
        format!("RIO rmse < NN rmse in {a}/{DIRECTIONAL_RUNS} runs, RIO mean NLPD {mean_nlpd:.3} (limit {ENB_NLPD_MAX})"),
    )
}

fn c6_rank_correlation() -> Outcome {
    let mut hits = 0;
    let mut rhos = Vec::new();
    for rep in 0..RHO_REPS {
        let ds = synthetic(Generator::Gp { d: 3, noise_std: 0.1 }, 300, 100 + rep as u64).unwrap();
        let mut cfg = BenchConfig { seed: rep as u64, ..BenchConfig::default() };
        cfg.nn.hidden = MID_QUALITY_HIDDEN.to_vec();
        match rank_correlation_trial(&ds, trial_seed(cfg.seed, rep), &cfg) {
            Ok(s) => {
                rhos.push(format!("{:.2}", s.rho));
                if s.rho >= RHO_MIN {
                    hits += 1;
                }
            }
            Err(e) => rhos.push(format!("err({e})")),
        }
    }
    verdict(hits >= RHO_MIN_REPS, format!("rho >= {RHO_MIN} in {hits}/{RHO_REPS} repetitions [{}]", rhos.join(" ")))
}

fn c7_coverage() -> Outcome {
    let n_train = 300;
    let ds = synthetic(Generator::Gp { d: 2, noise_std: 0.3 }, n_train + COVERAGE_N_TEST, 7).unwrap();
    let train_idx: Vec<usize> = (0..n_train).collect();
    let test_idx: Vec<usize> = (n_train..ds.n()).collect();
    let cfg = GpConfig { backend: Backend::Exact, ..GpConfig::default() };
    let model = train(Variant::SVGP, &ds, &train_idx, None, &cfg).unwrap();
    let g = calibrate_batch(&model, &ds.feature_rows(&test_idx), None).unwrap();
    let y: Vec<f64> = test_idx.iter().map(|&i| ds.targets[i]).collect();
    let mut ok = true;
    let mut parts = Vec::new();
    for level in [0.95, 0.90, 0.68] {
        let c = ci_coverage(&g, &y, level).unwrap();
        ok &= (c - level).abs() <= COVERAGE_TOL;
        parts.push(format!("{level}: {c:.3}"));
    }
    verdict(ok, format!("coverage {} at n_test={COVERAGE_N_TEST} (tol ±{COVERAGE_TOL})", parts.join(", ")))
}

fn c8_spread_tracks_residuals() -> Outcome {
    let mut hits = 0;
    for seed in 0..SPREAD_SEEDS {
        match figure2_scenario(seed) {
            Ok(o) if o.good.mean_predictive_std < o.bad.mean_predictive_std => hits += 1,
            Ok(_) => {}
            Err(e) => return Outcome::Fail(format!("seed {seed}: {e}")),
        }
    }
    verdict(hits >= SPREAD_MIN, format!("std(bad) > std(good) in {hits}/{SPREAD_SEEDS} seeds"))
}

fn c9_improvement_ratio(report: &Option<Result<BenchmarkReport, String>>) -> Outcome {
    let rep = match report {
        None => return Outcome::NotRun("RIO_YACHT_DATA not set; yacht table unavailable".into()),
        Some(Err(e)) => return Outcome::Fail(format!("benchmark failed: {e}")),
        Some(Ok(r)) => r,
    };
    let ir = per_run(rep, Variant::RIO, |m| m.improvement_ratio);
    let hits = ir.iter().flatten().filter(|v| **v > IR_MIN).count();
    verdict(hits >= DIRECTIONAL_MIN, format!("RIO improvement ratio > {IR_MIN} in {hits}/{DIRECTIONAL_RUNS} runs"))
}

fn c10_indistinguishable_signal() -> Outcome {
    match lemma1_check(10, 1.0, 0.1, 0) {
        Ok(r) => verdict(
            r.passed && r.probe_points == 100,
            format!(
                "|v|={:.2e}, max weight gap {:e} < {:e}, max prediction gap {:.2e} < 0.1 on {} probes",
                r.v_norm, r.max_weight_gap, r.weight_threshold, r.max_prediction_gap, r.probe_points
            ),
        ),
        Err(e) => Outcome::Fail(e.to_string()),
    }
}

fn c11_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let base = BenchConfig {
        data: DataSource::Synthetic { generator: Generator::YachtLike, n: 120 },
        runs: 3,
        seed: 42,
        ..BenchConfig::default()
    };
    let mut tables = Vec::new();
    for (k, workers) in [1usize, 2].into_iter().enumerate() {
        let out = dir.path().join(format!("report{k}.json"));
        let cfg = BenchConfig { workers, output: Some(out.clone()), ..base.clone() };
        if let Err(e) = run_benchmark(&cfg) {
            return Outcome::Fail(e.to_string());
        }
        tables.push(std::fs::read(table_path(&out)).unwrap());
    }
    verdict(tables[0] == tables[1], format!("raw-metric tables identical: {} bytes", tables[0].len()))
}

/// Same pipeline as criteria 4 and 9 on a synthetic table shaped like yacht.
/// Informational only.
fn surrogate_yacht() -> String {
    let cfg = BenchConfig { runs: DIRECTIONAL_RUNS, ..BenchConfig::default() };
    match run_benchmark(&cfg) {
        Ok(rep) => {
            let rio = per_run(&rep, Variant::RIO, |m| Some(m.rmse));
            let nn: Vec<Option<f64>> = rep.runs.iter().map(|r| r.nn_rmse).collect();
            let a = count(&rio, &nn, |x, y| x < y);
            let b = count(&per_run(&rep, Variant::RIO, |m| Some(m.noise_variance)), &per_run(&rep, Variant::SVGP, |m| Some(m.noise_variance)), |x, y| x < y);
            let ir = per_run(&rep, Variant::RIO, |m| m.improvement_ratio).iter().flatten().filter(|v| **v > IR_MIN).count();
            format!("RIO rmse < NN in {a}/10, RIO noise < SVGP noise in {b}/10, IR > 0.5 in {ir}/10")
        }
        Err(e) => format!("error: {e}"),
    }
}

fn main() {
    let yacht = yacht_report();
    let criteria: Vec<Criterion<'_>> = vec![
        (1, "sparse/exact oracle equivalence", Duration::from_secs(5), Box::new(c1_sparse_exact_equivalence)),
        (2, "gradient suite", Duration::from_secs(30), Box::new(c2_gradient_suite)),
        (3, "bound never exceeds LML", Duration::from_secs(60), Box::new(c3_bound_property)),
        (4, "yacht directional reproduction", Duration::from_secs(15 * 60), Box::new(|| c4_yacht(&yacht))),
        (5, "energy-efficiency (heating) directional reproduction", Duration::from_secs(20 * 60), Box::new(c5_enb)),
        (6, "rank correlation of RMSE and noise across variants", Duration::from_secs(10 * 60), Box::new(c6_rank_correlation)),
        (7, "interval coverage calibration", Duration::from_secs(2 * 60), Box::new(c7_coverage)),
        (8, "predictive spread tracks residual variance", Duration::from_secs(5 * 60), Box::new(c8_spread_tracks_residuals)),
        (9, "improvement ratio on yacht", Duration::from_secs(15 * 60), Box::new(|| c9_improvement_ratio(&yacht))),
        (10, "indistinguishable-signal construction", Duration::from_secs(60), Box::new(c10_indistinguishable_signal)),
        (11, "benchmark determinism", Duration::from_secs(10 * 60), Box::new(c11_determinism)),
    ];
    let (mut pass, mut fail, mut not_run) = (0, 0, 0);
    for (id, name, limit, f) in criteria {
        let (out, el) = timed(limit, f);
        let (tag, detail) = match out {
            Outcome::Pass(d) => {
                pass += 1;
                ("PASS", d)
            }
            Outcome::Fail(d) => {
                fail += 1;
                ("FAIL", d)
            }
            Outcome::NotRun(d) => {
                not_run += 1;
                ("NOT RUN", d)
            }
        };
        println!("criterion {id:>2} {tag:<7} {name}: {detail} [{:.1}s]", el.as_secs_f64());
    }
    println!("surrogate yacht-like pipeline (informational): {}", surrogate_yacht());
    println!("acceptance: {pass} passed, {fail} failed, {not_run} not run");
    if fail > 0 {
        std::process::exit(1);
    }
}
