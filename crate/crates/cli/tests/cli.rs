use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn rio(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rio")).current_dir(dir).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Deterministic 2-feature table: `y = sin(a) + 0.5 b² + small wobble`.
fn write_table(dir: &Path, n: usize) -> PathBuf {
    let mut s = String::from("a,b,y\n");
    for i in 0..n {
        let a = -2.0 + 4.0 * ((i * 37) % n) as f64 / n as f64;
        let b = -2.0 + 4.0 * ((i * 11 + 3) % n) as f64 / n as f64;
        let y = a.sin() + 0.5 * b * b + 0.05 * (7.0 * i as f64).sin();
        s.push_str(&format!("{a},{b},{y}\n"));
    }
    let p = dir.join("data.csv");
    fs::write(&p, s).unwrap();
    p
}

const FAST: [&str; 4] = ["--max-iters", "40", "--inducing", "10"];

fn fit_nn(dir: &Path) {
    let o = rio(dir, &["fit-nn", "--data", "data.csv", "--out", "nn.csv", "--seed", "3", "--hidden", "8", "--max-epochs", "40"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn residual_variant_without_predictions_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    write_table(dir.path(), 40);
    let o = rio(dir.path(), &["fit", "--data", "data.csv", "--variant", "r+i", "--out", "m.json"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--predictions"), "{}", stderr(&o));
    assert!(!dir.path().join("m.json").exists());
}

#[test]
fn bare_fit_names_missing_predictions_flag() {
    let dir = TempDir::new().unwrap();
    let o = rio(dir.path(), &["fit", "--variant", "r+i"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--predictions"));
}

#[test]
fn full_pipeline_round_trip() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    write_table(d, 60);
    fit_nn(d);
    let preds = fs::read_to_string(d.join("nn.csv")).unwrap();
    assert_eq!(preds.lines().count(), 61);

    let mut args = vec!["fit", "--data", "data.csv", "--predictions", "nn.csv", "--variant", "rio", "--seed", "3", "--out", "m.json"];
    args.extend(FAST);
    let o = rio(d, &args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let before: Vec<Vec<u8>> = ["data.csv", "nn.csv", "m.json"].iter().map(|f| fs::read(d.join(f)).unwrap()).collect();
    let o = rio(d, &["predict", "--model", "m.json", "--data", "data.csv", "--predictions", "nn.csv", "--out", "out.csv"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = fs::read_to_string(d.join("out.csv")).unwrap();
    assert_eq!(table.lines().next().unwrap(), "mean,std,latent_variance,outcome_variance");
    assert_eq!(table.lines().count(), 61);
    for line in table.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert!(v[1] > 0.0 && (v[1] * v[1] - v[3]).abs() < 1e-12);
    }

    let o = rio(d, &["evaluate", "--model", "m.json", "--data", "data.csv", "--predictions", "nn.csv", "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(report["rmse"].as_f64().unwrap() > 0.0);
    assert!(report["ci_coverage"]["0.95"].is_number());
    assert!(report["improvement_ratio"].is_number());

    let after: Vec<Vec<u8>> = ["data.csv", "nn.csv", "m.json"].iter().map(|f| fs::read(d.join(f)).unwrap()).collect();
    assert_eq!(before, after);
}

#[test]
fn predict_requires_base_predictions_for_residual_models() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    write_table(d, 40);
    fit_nn(d);
    let mut args = vec!["fit", "--data", "data.csv", "--predictions", "nn.csv", "--variant", "r+o", "--out", "m.json"];
    args.extend(FAST);
    assert_eq!(code(&rio(d, &args)), 0);
    let o = rio(d, &["predict", "--model", "m.json", "--data", "data.csv"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--predictions"));
}

#[test]
fn same_seed_gives_same_predictions() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    write_table(d, 50);
    let mut outputs = Vec::new();
    for model in ["a.json", "b.json"] {
        let mut args = vec!["fit", "--data", "data.csv", "--variant", "svgp", "--seed", "5", "--out", model];
        args.extend(FAST);
        assert_eq!(code(&rio(d, &args)), 0);
        let o = rio(d, &["predict", "--model", model, "--data", "data.csv"]);
        assert_eq!(code(&o), 0);
        outputs.push(o.stdout);
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn config_file_matches_flags_and_flags_override_it() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    write_table(d, 50);
    let mut args = vec!["fit", "--data", "data.csv", "--variant", "svgp", "--seed", "2", "--out", "flags.json"];
    args.extend(FAST);
    assert_eq!(code(&rio(d, &args)), 0);
    fs::write(
        d.join("fit.json"),
        r#"{"data": "data.csv", "variant": "rio", "seed": 2, "out": "cfg.json", "max_iters": 40, "inducing": 10}"#,
    )
    .unwrap();
    let o = rio(d, &["fit", "--config", "fit.json", "--variant", "svgp"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let pa = rio(d, &["predict", "--model", "flags.json", "--data", "data.csv"]);
    let pb = rio(d, &["predict", "--model", "cfg.json", "--data", "data.csv"]);
    assert_eq!(pa.stdout, pb.stdout);

    fs::write(d.join("bad.json"), r#"{"no_such_flag": 1}"#).unwrap();
    assert_eq!(code(&rio(d, &["fit", "--config", "bad.json"])), 1);
}

#[test]
fn data_errors_exit_with_code_two() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    assert_eq!(code(&rio(d, &["fit", "--data", "absent.csv", "--variant", "svgp", "--out", "m.json"])), 2);
    fs::write(d.join("bad.csv"), "a,y\n1,2\nx,3\n").unwrap();
    let o = rio(d, &["fit", "--data", "bad.csv", "--variant", "svgp", "--out", "m.json"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("row 2"));
    write_table(d, 30);
    fs::write(d.join("short.csv"), "prediction\n1.0\n").unwrap();
    let o = rio(d, &["fit", "--data", "data.csv", "--predictions", "short.csv", "--variant", "rio", "--out", "m.json"]);
    assert_eq!(code(&o), 2);
    fs::write(d.join("m.json"), "{\"format_version\": 99}").unwrap();
    assert_eq!(code(&rio(d, &["predict", "--model", "m.json", "--data", "data.csv"])), 2);
}

#[test]
fn usage_errors_and_help() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&rio(dir.path(), &["fit", "--bogus"])), 1);
    assert_eq!(code(&rio(dir.path(), &["fit", "--variant", "y+x"])), 1);
    assert_eq!(code(&rio(dir.path(), &["--help"])), 0);
    assert_eq!(code(&rio(dir.path(), &["--version"])), 0);
    assert_eq!(code(&rio(dir.path(), &["check", "--seed", "-1"])), 1);
}

#[test]
fn check_suites_pass() {
    let dir = TempDir::new().unwrap();
    let o = rio(dir.path(), &["check", "--gradients"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["gradients"]["passed"], true);
    let o = rio(dir.path(), &["check", "--lemma1"]);
    assert_eq!(code(&o), 0);
}

#[test]
fn benchmark_table_is_byte_identical_across_runs_and_workers() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let common = [
        "benchmark", "--synthetic", "sine", "--n", "80", "--runs", "2", "--seed", "4", "--variants", "rio,svgp,r+o",
        "--hidden", "8", "--max-epochs", "30", "--max-iters", "30", "--inducing", "10",
    ];
    let mut tables = Vec::new();
    for (workers, out) in [("1", "one.json"), ("2", "two.json")] {
        let mut args = common.to_vec();
        args.extend(["--workers", workers, "--out", out]);
        let o = rio(d, &args);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        tables.push(fs::read(d.join(out).with_extension("csv")).unwrap());
    }
    assert!(!tables[0].is_empty());
    assert_eq!(tables[0], tables[1]);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(d.join("one.json")).unwrap()).unwrap();
    assert_eq!(report["runs"].as_array().unwrap().len(), 2);
}
