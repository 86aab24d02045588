use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn tubepi(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tubepi"))
        .args(args)
        .current_dir(dir)
        .env_remove("TUBEPI_SEED")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Value {
    let out = tubepi(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is a JSON report")
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    tubepi(dir, args).status.code().expect("exit status")
}

fn without_timing(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("timing");
    v
}

fn all_numbers_finite(v: &Value) -> bool {
    match v {
        Value::Number(n) => n.as_f64().is_some_and(f64::is_finite),
        Value::Array(a) => a.iter().all(all_numbers_finite),
        Value::Object(m) => m.values().all(all_numbers_finite),
        _ => true,
    }
}

const QUICK: &[&str] = &["--n", "300", "--max-iters", "300"];

fn with<'a>(base: &[&'a str], extra: &[&'a str]) -> Vec<&'a str> {
    base.iter().chain(extra).copied().collect()
}

#[test]
fn gen_writes_header_and_rows() {
    let dir = TempDir::new().unwrap();
    let out = tubepi(dir.path(), &["gen", "--dataset", "a", "--n", "1500", "--seed", "7", "--out", "a.csv"]);
    assert!(out.status.success());
    let text = fs::read_to_string(dir.path().join("a.csv")).unwrap();
    let lines: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(lines[0], "x1,y");
    assert_eq!(lines.len(), 1501);
    assert!(text.starts_with("# generator=dataset_a\n# seed=7\n"));

    let gauss = tubepi(dir.path(), &["gen", "--dataset", "gauss", "--dim", "3", "--n", "10"]);
    let text = String::from_utf8(gauss.stdout).unwrap();
    assert!(text.lines().any(|l| l == "x1,x2,x3,y"));
}

#[test]
fn generated_csv_trains_like_the_generator() {
    let dir = TempDir::new().unwrap();
    tubepi(dir.path(), &["gen", "--n", "300", "--seed", "3", "--out", "a.csv"]);
    let from_gen = ok(dir.path(), &with(&["train", "--seed", "3", "--out-dir", "g"], QUICK));
    let from_csv = ok(dir.path(), &["train", "--data", "a.csv", "--seed", "3", "--max-iters", "300", "--out-dir", "c"]);
    assert_eq!(from_gen["results"]["test"]["picp"], from_csv["results"]["test"]["picp"]);
    assert_eq!(from_gen["results"]["test"]["mpiw"], from_csv["results"]["test"]["mpiw"]);
}

#[test]
fn train_writes_artifacts_and_eval_reads_the_model() {
    let dir = TempDir::new().unwrap();
    let report = ok(dir.path(), &with(&["train", "--seed", "2", "--out-dir", "o"], QUICK));
    for f in ["report.json", "predictions.csv", "model.json"] {
        assert!(dir.path().join("o").join(f).exists(), "{f}");
    }
    let written: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("o/report.json")).unwrap()).unwrap();
    assert_eq!(written, report);
    let preds = fs::read_to_string(dir.path().join("o/predictions.csv")).unwrap();
    assert_eq!(preds.lines().next(), Some("x1,y,lower,upper"));
    assert_eq!(preds.lines().count(), 1 + report["results"]["n_test"].as_u64().unwrap() as usize);

    let eval = ok(dir.path(), &["eval", "--model", "o/model.json", "--n", "200", "--seed", "11", "--out-dir", "e"]);
    assert_eq!(eval["results"]["eval"]["n"], 200);
    assert_eq!(eval["results"]["model_seed"], 2);
}

#[test]
fn damaged_model_files_are_rejected() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &with(&["train", "--out-dir", "o"], QUICK));
    let text = fs::read_to_string(dir.path().join("o/model.json")).unwrap();

    fs::write(dir.path().join("truncated.json"), &text[..text.len() / 2]).unwrap();
    let out = tubepi(dir.path(), &["eval", "--model", "truncated.json", "--n", "50"]);
    assert_eq!(out.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&out.stderr).contains("corrupt model file"));

    let bumped = text.replacen("\"format_version\":1", "\"format_version\":2", 1);
    assert_ne!(bumped, text);
    fs::write(dir.path().join("bumped.json"), bumped).unwrap();
    let out = tubepi(dir.path(), &["eval", "--model", "bumped.json", "--n", "50"]);
    assert_eq!(out.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unsupported model format version 2"));
}

#[test]
fn lemma_check_ratio_near_limit() {
    let dir = TempDir::new().unwrap();
    let report = ok(dir.path(), &["lemma-check", "--t", "0.8", "--m", "5000", "--seed", "3"]);
    let ratio = report["results"]["ratio_out_in"].as_f64().unwrap();
    assert!((ratio - 0.25).abs() <= 0.05, "ratio {ratio}");
    assert!((report["results"]["target"].as_f64().unwrap() - 0.25).abs() < 1e-12);
}

#[test]
fn reports_are_reproducible_apart_from_timing() {
    let dir = TempDir::new().unwrap();
    let args = with(&["train", "--seed", "5", "--out-dir", "o"], QUICK);
    let a = ok(dir.path(), &args);
    let b = ok(dir.path(), &args);
    assert_eq!(without_timing(a), without_timing(b));

    let args = ["sweep-r", "--n", "300", "--max-iters", "200", "--grid", "0.3,0.5", "--out-dir", "s"];
    let first = without_timing(ok(dir.path(), &args));
    let csv_first = fs::read(dir.path().join("s/sweep.csv")).unwrap();
    let second = without_timing(ok(dir.path(), &args));
    assert_eq!(first, second);
    assert_eq!(csv_first, fs::read(dir.path().join("s/sweep.csv")).unwrap());
}

#[test]
fn seed_precedence() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("exp.toml"), "seed = 5\n\n[tube]\nt = 0.7\n\n[backbone]\nmax_iters = 200\n").unwrap();
    let base = ["train", "--config", "exp.toml", "--n", "200", "--out-dir", "o"];

    let from_file = ok(dir.path(), &base);
    assert_eq!(from_file["seed"], 5);
    assert_eq!(from_file["settings"]["params"]["t"], 0.7);
    assert_eq!(from_file["settings"]["backbone"]["gd"]["max_iters"], 200);

    let out = Command::new(env!("CARGO_BIN_EXE_tubepi"))
        .args(base)
        .current_dir(dir.path())
        .env("TUBEPI_SEED", "9")
        .output()
        .unwrap();
    let from_env: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(from_env["seed"], 9);

    let out = Command::new(env!("CARGO_BIN_EXE_tubepi"))
        .args(base)
        .args(["--seed", "12", "--t", "0.9"])
        .current_dir(dir.path())
        .env("TUBEPI_SEED", "9")
        .output()
        .unwrap();
    let from_flag: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(from_flag["seed"], 12);
    assert_eq!(from_flag["settings"]["params"]["t"], 0.9);
}

#[test]
fn exit_codes_are_distinct() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(dir.path(), &["train", "--t", "1.5"]), 2);
    assert_eq!(code(dir.path(), &["train", "--no-such-flag"]), 2);
    fs::write(dir.path().join("bad.toml"), "[tube\nt = ").unwrap();
    assert_eq!(code(dir.path(), &["train", "--config", "bad.toml"]), 2);
    fs::write(dir.path().join("unknown.toml"), "[tube]\ncoverage = 0.8\n").unwrap();
    assert_eq!(code(dir.path(), &["train", "--config", "unknown.toml"]), 2);
    assert_eq!(code(dir.path(), &["train", "--config", "missing.toml"]), 3);
    assert_eq!(code(dir.path(), &["eval", "--model", "missing.json"]), 3);
    assert_eq!(code(dir.path(), &with(&["train", "--learning-rate", "1e300", "--out-dir", "d"], QUICK)), 4);
    fs::write(dir.path().join("bad.csv"), "x,y\n1,a\n").unwrap();
    assert_eq!(code(dir.path(), &["train", "--data", "bad.csv"]), 5);
    fs::write(dir.path().join("tiny.csv"), "x,y\n1,2\n2,3\n").unwrap();
    assert_eq!(code(dir.path(), &["train", "--data", "tiny.csv"]), 5);

    let help = tubepi(dir.path(), &["--help"]);
    let text = String::from_utf8(help.stdout).unwrap();
    for line in ["2    usage or config error", "3    I/O error", "4    training diverged", "5    data error"] {
        assert!(text.contains(line), "{line}");
    }
}

#[test]
fn every_report_matches_the_schema() {
    let schema: Value =
        serde_json::from_str(&fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/schema/report.schema.json")).unwrap())
            .unwrap();
    let validator = jsonschema::validator_for(&schema).expect("schema compiles");

    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let runs: Vec<Vec<&str>> = vec![
        with(&["train", "--out-dir", "t"], QUICK),
        vec!["eval", "--model", "t/model.json", "--n", "100", "--seed", "4", "--out-dir", "e"],
        with(&["sweep-r", "--dataset", "b", "--grid", "0.2,0.5", "--out-dir", "s"], QUICK),
        with(&["recalibrate", "--t", "0.85", "--target", "0.8", "--schedule", "0,0.01", "--out-dir", "r"], QUICK),
        vec!["lemma-check", "--m", "500", "--distribution", "chi2", "--t", "0.9"],
        vec![
            "conformal", "--trials", "2", "--n-train", "100", "--n-calib", "50", "--n-test", "100", "--dim", "3",
            "--max-iters", "200", "--out-dir", "c",
        ],
        vec![
            "conformal", "--method", "tcr", "--backbone", "net", "--hidden-units", "4", "--epochs", "3", "--trials", "1",
            "--n-train", "100", "--n-calib", "50", "--n-test", "50", "--out-dir", "cn",
        ],
        vec!["forecast", "--n", "300", "--noise-std", "1", "--window", "3", "--max-iters", "200", "--out-dir", "f"],
        vec!["forecast", "--n", "300", "--window", "3", "--scale", "--backbone", "net", "--epochs", "3", "--out-dir", "fn"],
    ];
    for args in &runs {
        let report = ok(d, args);
        let errors: Vec<String> = validator.iter_errors(&report).map(|e| format!("{e} at {}", e.instance_path())).collect();
        assert!(errors.is_empty(), "{args:?}: {errors:?}");
        assert!(all_numbers_finite(&report), "{args:?}");
        assert_eq!(report["command"], args[0]);
    }

    let trials = fs::read_to_string(d.join("c/trials.csv")).unwrap();
    assert_eq!(trials.lines().next(), Some("method,trial,picp,mpiw,q_hat,time"));
    assert_eq!(trials.lines().count(), 5);
    let forecast = fs::read_to_string(d.join("f/forecast.csv")).unwrap();
    assert_eq!(forecast.lines().next(), Some("index,lower,upper,y"));
    assert_eq!(forecast.lines().count(), 1 + 90);
    let sweep = fs::read_to_string(d.join("s/sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 3);
}

#[test]
fn shipped_config_runs() {
    let dir = TempDir::new().unwrap();
    let config = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/dataset_a.toml");
    let report = ok(dir.path(), &["train", "--config", config, "--out-dir", "o"]);
    assert_eq!(report["results"]["n_train"], 500);
    assert_eq!(report["results"]["n_test"], 1000);
    let picp = report["results"]["test"]["picp"].as_f64().unwrap();
    assert!((0.7..=0.9).contains(&picp), "picp {picp}");
}
