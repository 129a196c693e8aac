use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde_json::json;

use rio_core::data_io::{
    format_predictions, load_dataset, load_features, load_predictions, split, Dataset, SplitIndices, TargetColumn,
};
use rio_core::harness::{gradient_suite, lemma1_check, run_benchmark, table_path, write_report, BenchConfig, DataSource, Generator};
use rio_core::metrics::{self, evaluate};
use rio_core::mlp::{train_mlp, MlpConfig};
use rio_core::rio::{calibrate_batch, load_model, save_model, train, Backend, GpConfig, RioModel, Variant};
use rio_core::sparse_gp::DEFAULT_INDUCING;
use rio_core::{Error, ErrorClass};

mod config;

const GRADIENT_INSTANCES: usize = 50;
const GRADIENT_TOL: f64 = 1e-4;
const NEEDS_PREDICTIONS: [(&str, &str); 5] =
    [("variant", "rio"), ("variant", "r+i"), ("variant", "r+o"), ("variant", "y+io"), ("variant", "y+o")];

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e.class() {
            ErrorClass::Usage => CliError::Usage(e.to_string()),
            ErrorClass::Data => CliError::Data(e.to_string()),
            ErrorClass::Numerical => CliError::Numerical(e.to_string()),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numerical(m) => m,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Calibrated predictive uncertainty for regression models via residual
/// Gaussian processes.
#[derive(Parser, Debug)]
#[command(name = "rio", version, arg_required_else_help = true)]
struct Cli {
    /// More diagnostics on standard error (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the base network and write its predictions for every row.
    #[command(name = "fit-nn", args_override_self = true)]
    FitNn(FitNnArgs),
    /// Fit a calibration variant on the training rows.
    #[command(args_override_self = true)]
    Fit(FitArgs),
    /// Write predictive mean and spread for new rows.
    #[command(args_override_self = true)]
    Predict(PredictArgs),
    /// Report accuracy and calibration metrics for a fitted model.
    #[command(args_override_self = true)]
    Evaluate(EvaluateArgs),
    /// Run repeated trials over variants and write a report.
    #[command(args_override_self = true)]
    Benchmark(BenchmarkArgs),
    /// Run numerical self-checks.
    #[command(args_override_self = true)]
    Check(CheckArgs),
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Delimited table with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Target column name or zero-based index [default: last column].
    #[arg(long)]
    target: Option<String>,
}

impl DataArgs {
    fn load(&self) -> CliResult<Dataset> {
        let target = self.target.as_deref().map_or(TargetColumn::Last, TargetColumn::from);
        Ok(load_dataset(&self.data, &target)?)
    }
}

#[derive(Args, Debug)]
struct SplitArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.2)]
    test_frac: f64,
    #[arg(long, default_value_t = 0.2)]
    val_frac: f64,
}

impl SplitArgs {
    fn split(&self, n: usize) -> CliResult<SplitIndices> {
        Ok(split(n, self.seed, self.test_frac, self.val_frac)?)
    }
}

#[derive(Args, Debug)]
struct NnArgs {
    /// Hidden layer widths, comma separated.
    #[arg(long, default_value = "64,64")]
    hidden: String,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 1000)]
    max_epochs: usize,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
}

impl NnArgs {
    fn config(&self, seed: u64) -> CliResult<MlpConfig> {
        let hidden = self
            .hidden
            .split(',')
            .map(|w| w.trim().parse::<usize>().ok().filter(|&w| w > 0))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| CliError::Usage(format!("--hidden expects positive widths, got '{}'", self.hidden)))?;
        Ok(MlpConfig { hidden, lr: self.lr, max_epochs: self.max_epochs, patience: self.patience, batch: self.batch, seed })
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BackendArg {
    Sparse,
    Exact,
}

#[derive(Args, Debug)]
struct GpArgs {
    /// Number of inducing points (sparse backend).
    #[arg(long, default_value_t = DEFAULT_INDUCING)]
    inducing: usize,
    /// Per-dimension input lengthscales.
    #[arg(long)]
    ard: bool,
    #[arg(long, default_value_t = 1000)]
    max_iters: usize,
    #[arg(long, value_enum, default_value_t = BackendArg::Sparse)]
    backend: BackendArg,
}

impl GpArgs {
    fn config(&self, seed: u64) -> CliResult<GpConfig> {
        if self.inducing == 0 {
            return Err(CliError::Usage("--inducing must be >= 1".into()));
        }
        let backend = match self.backend {
            BackendArg::Sparse => Backend::Sparse,
            BackendArg::Exact => Backend::Exact,
        };
        Ok(GpConfig { backend, inducing: self.inducing, ard: self.ard, max_iters: self.max_iters, seed })
    }
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Args, Debug)]
struct FitNnArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    split: SplitArgs,
    #[command(flatten)]
    nn: NnArgs,
    /// Prediction file for every row of --data.
    #[arg(long)]
    out: PathBuf,
    /// JSON file whose keys are this command's long flag names.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    split: SplitArgs,
    #[command(flatten)]
    gp: GpArgs,
    /// rio, r+i, r+o, y+io, y+o or svgp.
    #[arg(long, value_parser = parse_variant)]
    variant: Variant,
    /// Base-model predictions for every row of --data.
    #[arg(long, required_if_eq_any = NEEDS_PREDICTIONS)]
    predictions: Option<PathBuf>,
    /// Fit on every row instead of the training part of the split.
    #[arg(long)]
    all_rows: bool,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
    /// JSON file whose keys are this command's long flag names.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Feature table; a target column is dropped if --target names it or the
    /// table has one column more than the model expects.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    target: Option<String>,
    /// Base-model predictions for every row of --data.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Output table [default: standard output].
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON file whose keys are this command's long flag names.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RowsArg {
    Test,
    Validation,
    Train,
    All,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    split: SplitArgs,
    /// Base-model predictions for every row of --data.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Which part of the split to score.
    #[arg(long, value_enum, default_value_t = RowsArg::Test)]
    rows: RowsArg,
    /// JSON file whose keys are this command's long flag names.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SyntheticArg {
    YachtLike,
    Sine,
    Gp,
}

#[derive(Args, Debug)]
struct BenchmarkArgs {
    /// Delimited table; omit to use --synthetic.
    #[arg(long, conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    #[arg(long, requires = "data")]
    target: Option<String>,
    #[arg(long, value_enum, default_value_t = SyntheticArg::YachtLike)]
    synthetic: SyntheticArg,
    /// Rows of the synthetic dataset.
    #[arg(long, default_value_t = 308)]
    n: usize,
    /// Input dimension of the GP-prior generator.
    #[arg(long, default_value_t = 3)]
    gp_dim: usize,
    /// Noise standard deviation of the GP-prior generator.
    #[arg(long, default_value_t = 0.1)]
    gp_noise: f64,
    /// Comma-separated variant names.
    #[arg(long, default_value = "rio,r+i,r+o,y+io,y+o,svgp")]
    variants: String,
    #[arg(long, default_value_t = 10)]
    runs: usize,
    #[command(flatten)]
    split: SplitArgs,
    #[command(flatten)]
    gp: GpArgs,
    #[command(flatten)]
    nn: NnArgs,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Report path; the flat table goes next to it with a .csv extension.
    #[arg(long)]
    out: PathBuf,
    /// JSON file whose keys are this command's long flag names.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CheckArgs {
    /// Analytic gradients against finite differences.
    #[arg(long)]
    gradients: bool,
    /// Construction of an indistinguishable signal for a small GP.
    #[arg(long)]
    lemma1: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON file whose keys are this command's long flag names.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn write_out(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json value serializes"));
}

fn rows_of(v: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| v[i]).collect()
}

fn fit_nn(a: &FitNnArgs) -> CliResult<()> {
    let cfg = a.nn.config(a.split.seed)?;
    let ds = a.data.load()?;
    let s = a.split.split(ds.n())?;
    let net = train_mlp(&ds, &s, &cfg)?;
    let preds = net.predict(&ds.features)?;
    write_out(&a.out, &format_predictions(&preds))?;
    let y = ds.target_rows(&s.test);
    let test_rmse = metrics::rmse(&rows_of(&preds, &s.test), y.as_slice())?;
    info!("trained {} epochs, best at {}", net.log.epochs_run, net.log.best_epoch);
    print_json(&json!({
        "rows": ds.n(),
        "train": s.train.len(),
        "validation": s.validation.len(),
        "test": s.test.len(),
        "epochs_run": net.log.epochs_run,
        "best_epoch": net.log.best_epoch,
        "best_val_loss": net.log.best_val_loss,
        "test_rmse": test_rmse,
    }));
    Ok(())
}

fn missing_predictions(v: Variant) -> CliError {
    let why = if v.target == rio_core::rio::TargetKind::Residuals { "trains on residuals" } else { "uses the output kernel" };
    CliError::Usage(format!("variant {} {why} and needs --predictions", v.name()))
}

fn fit(a: &FitArgs) -> CliResult<()> {
    if a.variant.needs_predictions() && a.predictions.is_none() {
        return Err(missing_predictions(a.variant));
    }
    let cfg = a.gp.config(a.split.seed)?;
    let ds = a.data.load()?;
    let rows: Vec<usize> = if a.all_rows { (0..ds.n()).collect() } else { a.split.split(ds.n())?.train };
    let preds = match &a.predictions {
        Some(p) => Some(load_predictions(p, ds.n())?),
        None => None,
    };
    let base = preds.as_ref().map(|p| rows_of(p, &rows));
    let model = train(a.variant, &ds, &rows, base.as_deref(), &cfg)?;
    save_model(&model, &a.out)?;
    let fit = model.gp.fit_report();
    if let Some(w) = fit.and_then(|f| f.warning.as_ref()) {
        warn!("{w}");
    }
    print_json(&json!({
        "variant": a.variant.name(),
        "train_rows": rows.len(),
        "noise_variance": model.noise_variance(),
        "objective": fit.map(|f| f.objective_final),
        "iterations": fit.map(|f| f.iterations),
        "converged": fit.map(|f| f.converged),
        "fit_wall_time_sec": model.metadata.fit_wall_time_sec,
    }));
    Ok(())
}

fn model_features(model: &RioModel, path: &Path, target: Option<&str>) -> CliResult<nalgebra::DMatrix<f64>> {
    let d = model.standardizer.dim();
    let (x, names) = load_features(path)?;
    let drop = match target {
        Some(t) => Some(
            names
                .iter()
                .position(|n| n == t)
                .or_else(|| t.parse::<usize>().ok().filter(|&i| i < names.len()))
                .ok_or_else(|| Error::MissingColumn(t.to_string()))?,
        ),
        None if x.ncols() == d + 1 => Some(d),
        None => None,
    };
    let x = match drop {
        Some(c) => x.remove_column(c),
        None => x,
    };
    if x.ncols() != d {
        return Err(Error::DimensionMismatch { expected: d, found: x.ncols() }.into());
    }
    Ok(x)
}

fn predict(a: &PredictArgs) -> CliResult<()> {
    let model = load_model(&a.model)?;
    if model.variant.needs_predictions() && a.predictions.is_none() {
        return Err(missing_predictions(model.variant));
    }
    let x = model_features(&model, &a.data, a.target.as_deref())?;
    let preds = match &a.predictions {
        Some(p) => Some(load_predictions(p, x.nrows())?),
        None => None,
    };
    let g = calibrate_batch(&model, &x, preds.as_deref().filter(|_| model.variant.needs_predictions()))?;
    let mut out = String::from("mean,std,latent_variance,outcome_variance\n");
    for p in &g {
        out.push_str(&format!("{:?},{:?},{:?},{:?}\n", p.mean, p.std(), p.latent_variance, p.outcome_variance));
    }
    match &a.out {
        Some(path) => write_out(path, &out),
        None => std::io::stdout().write_all(out.as_bytes()).map_err(|e| CliError::Data(e.to_string())),
    }
}

fn evaluate_cmd(a: &EvaluateArgs) -> CliResult<()> {
    let model = load_model(&a.model)?;
    if model.variant.needs_predictions() && a.predictions.is_none() {
        return Err(missing_predictions(model.variant));
    }
    let ds = a.data.load()?;
    if ds.d() != model.standardizer.dim() {
        return Err(Error::DimensionMismatch { expected: model.standardizer.dim(), found: ds.d() }.into());
    }
    let rows = match a.rows {
        RowsArg::All => (0..ds.n()).collect(),
        RowsArg::Test => a.split.split(ds.n())?.test,
        RowsArg::Validation => a.split.split(ds.n())?.validation,
        RowsArg::Train => a.split.split(ds.n())?.train,
    };
    if rows.is_empty() {
        return Err(CliError::Usage("selected rows are empty".into()));
    }
    let preds = match &a.predictions {
        Some(p) => Some(rows_of(&load_predictions(p, ds.n())?, &rows)),
        None => None,
    };
    let yhat = preds.as_deref().filter(|_| model.variant.needs_predictions());
    let g = calibrate_batch(&model, &ds.feature_rows(&rows), yhat)?;
    let y = ds.target_rows(&rows);
    let report = evaluate(&g, y.as_slice(), preds.as_deref(), model.noise_variance(), model.metadata.fit_wall_time_sec)?;
    print_json(&serde_json::to_value(&report).expect("report serializes"));
    Ok(())
}

fn benchmark(a: &BenchmarkArgs) -> CliResult<()> {
    let variants =
        a.variants.split(',').map(|s| parse_variant(s.trim())).collect::<Result<Vec<_>, _>>().map_err(CliError::Usage)?;
    let data = match &a.data {
        Some(path) => DataSource::File { path: path.clone(), target: a.target.clone() },
        None => {
            let generator = match a.synthetic {
                SyntheticArg::YachtLike => Generator::YachtLike,
                SyntheticArg::Sine => Generator::Sine,
                SyntheticArg::Gp => Generator::Gp { d: a.gp_dim, noise_std: a.gp_noise },
            };
            DataSource::Synthetic { generator, n: a.n }
        }
    };
    let cfg = BenchConfig {
        data,
        variants,
        runs: a.runs,
        seed: a.split.seed,
        test_frac: a.split.test_frac,
        val_frac: a.split.val_frac,
        gp: a.gp.config(a.split.seed)?,
        nn: a.nn.config(a.split.seed)?,
        workers: a.workers,
        output: Some(a.out.clone()),
    };
    cfg.validate()?;
    let report = run_benchmark(&cfg)?;
    write_report(&report, &a.out)?;
    for e in &report.errors {
        warn!("{e}");
    }
    for agg in &report.aggregates {
        if let Some(r) = agg.metrics.get("rmse") {
            info!("{}: rmse {:.4} ± {:.4}", agg.variant.name(), r.mean, r.std);
        }
    }
    print_json(&json!({
        "dataset": report.dataset,
        "runs": report.runs.len(),
        "errors": report.errors.len(),
        "report": a.out,
        "table": table_path(&a.out),
    }));
    Ok(())
}

fn check(a: &CheckArgs) -> CliResult<()> {
    let all = !a.gradients && !a.lemma1;
    let mut ok = true;
    let mut out = serde_json::Map::new();
    if a.gradients || all {
        let g = gradient_suite(GRADIENT_INSTANCES)?;
        let pass = g.passes(GRADIENT_TOL);
        ok &= pass;
        out.insert("gradients".into(), json!({ "passed": pass, "tolerance": GRADIENT_TOL, "result": g }));
    }
    if a.lemma1 || all {
        let r = lemma1_check(10, 1.0, 0.1, a.seed)?;
        ok &= r.passed;
        out.insert("lemma1".into(), serde_json::to_value(&r).expect("record serializes"));
    }
    print_json(&serde_json::Value::Object(out));
    if ok {
        Ok(())
    } else {
        Err(CliError::Numerical("self-check failed".into()))
    }
}

const SUBCOMMANDS: [&str; 6] = ["fit-nn", "fit", "predict", "evaluate", "benchmark", "check"];

/// Splices config-file entries in right after the subcommand name, ahead of
/// the explicit flags.
fn expand_config(args: Vec<OsString>) -> CliResult<Vec<OsString>> {
    let Some(at) = args.iter().position(|a| SUBCOMMANDS.iter().any(|s| a == s)) else {
        return Ok(args);
    };
    let mut path = None;
    for (i, a) in args.iter().enumerate().skip(at + 1) {
        let a = a.to_string_lossy();
        if a == "--" {
            break;
        }
        if a == "--config" {
            path = args.get(i + 1).map(PathBuf::from);
        } else if let Some(v) = a.strip_prefix("--config=") {
            path = Some(PathBuf::from(v));
        }
    }
    let Some(path) = path else {
        return Ok(args);
    };
    let mut spliced = args[..=at].to_vec();
    spliced.extend(config::expand(&path)?);
    spliced.extend_from_slice(&args[at + 1..]);
    Ok(spliced)
}

fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::FitNn(a) => fit_nn(a),
        Command::Fit(a) => fit(a),
        Command::Predict(a) => predict(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Benchmark(a) => benchmark(a),
        Command::Check(a) => check(a),
    }
}

fn main() -> ExitCode {
    let args = match expand_config(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {}", e.message());
            return ExitCode::from(e.exit_code());
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
