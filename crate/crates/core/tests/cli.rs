use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const GAUSSIAN: &str = r#"{"family": {"name": "gaussian", "mean": 0, "var": 1}, "lambda": 0.5, "x": 0, "a": 1}"#;

fn fpt(dir: &Path, config: &str, args: &[&str]) -> Output {
    let cfg = dir.join("config.json");
    std::fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_fpt"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap()
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("out/report.json")).unwrap()).unwrap()
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).unwrap()
}

#[test]
fn phi_writes_report_and_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = fpt(dir.path(), GAUSSIAN, &["phi", "--u-grid", "0:2:0.5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(dir.path());
    assert_eq!(r["tool"], "fpt");
    assert_eq!(r["subcommand"], "phi");
    assert_eq!(r["seed"], 42);
    assert!(r["wall_clock_seconds"].is_number());
    let table = std::fs::read_to_string(dir.path().join("out/table.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "u,phi,abs_err");
    assert_eq!(lines.len(), 6);
    let row: Vec<f64> = lines[3].split(',').map(|s| s.parse().unwrap()).collect();
    assert_eq!(row[0], 1.0);
    assert!((row[1] - 2.0 / 3.0).abs() < 1e-15);
}

#[test]
fn simulate_is_reproducible_and_dumps_paths() {
    let cfg = GAUSSIAN.replace("\"a\": 1", "\"a\": 1, \"dump_paths\": true");
    let mut results = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let out = fpt(dir.path(), &cfg, &["simulate", "--paths", "500", "--seed", "9"]);
        assert!(out.status.success());
        let paths = std::fs::read_to_string(dir.path().join("out/paths.csv")).unwrap();
        assert_eq!(paths.lines().count(), 501);
        results.push((report(dir.path())["result"].clone(), paths));
    }
    assert_eq!(results[0], results[1]);
    assert_eq!(results[0].0["simulation"]["seed"], 9);
}

#[test]
fn bounds_order() {
    let dir = tempfile::tempdir().unwrap();
    let out = fpt(dir.path(), GAUSSIAN, &["bounds", "--cap", "4"]);
    assert!(out.status.success());
    let r = report(dir.path());
    let lo = r["result"]["lower_bound"]["value"].as_f64().unwrap();
    let hi = r["result"]["upper_bound"]["value"].as_f64().unwrap();
    assert!(0.0 < lo && lo < hi);
}

#[test]
fn validate_residuals_are_small() {
    let dir = tempfile::tempdir().unwrap();
    let out = fpt(dir.path(), GAUSSIAN, &["validate"]);
    assert!(out.status.success());
    let r = report(dir.path());
    assert!(r["result"]["max_relative_residual"].as_f64().unwrap() < 1e-6);
    let table = std::fs::read_to_string(dir.path().join("out/table.csv")).unwrap();
    assert!(table.starts_with("kind,y,v,"));
}

#[test]
fn identity_check_and_certificate_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = fpt(dir.path(), GAUSSIAN, &["identity-check", "--paths", "20000"]);
    assert!(out.status.success());
    let r = report(dir.path())["result"].clone();
    assert_eq!(r["valid"], true);
    assert!(r["discrepancy_in_std_errs"].as_f64().unwrap().abs() < 4.0);

    let dir = tempfile::tempdir().unwrap();
    let out = fpt(dir.path(), GAUSSIAN, &["certificate", "--paths", "2000", "--delta", "0.5"]);
    assert!(out.status.success());
    let r = report(dir.path())["result"].clone();
    assert!(r["certificate"]["alpha"].as_f64().unwrap() > 0.0);
}

#[test]
fn invalid_lambda_exits_with_parameter_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = fpt(dir.path(), &GAUSSIAN.replace("0.5", "1.2"), &["phi"]);
    assert_eq!(out.status.code(), Some(3));
    let e = stderr_json(&out);
    assert_eq!(e["category"], "invalid-parameter");
    assert!(e["message"].as_str().unwrap().contains("0 < λ < 1"));
}

#[test]
fn schema_error_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let out = fpt(
        dir.path(),
        r#"{"family": {"name": "gaussian", "mean": 0, "var": 1}, "lambda": 0.5, "a": "one"}"#,
        &["bounds"],
    );
    assert_eq!(out.status.code(), Some(2));
    let e = stderr_json(&out);
    assert_eq!(e["category"], "config");
    assert!(e["message"].as_str().unwrap().contains("`a`"));
}

#[test]
fn impossible_crossing_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"family": {"name": "deterministic", "value": 1}, "lambda": 0.5, "x": 0, "a": 3}"#;
    let out = fpt(dir.path(), cfg, &["bounds"]);
    assert_eq!(out.status.code(), Some(5));
    assert_eq!(stderr_json(&out)["category"], "no-crossing");
}

#[test]
fn deterministic_identity_check_has_no_discrepancy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"family": {"name": "deterministic", "value": 1}, "lambda": 0.5, "x": 0, "a": 1.5}"#;
    let out = fpt(dir.path(), cfg, &["identity-check", "--paths", "100"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("discrepancy"));
    let r = report(dir.path())["result"].clone();
    assert_eq!(r["e_tau_hat"]["value"], 3.0);
    assert!(r["discrepancy"].as_f64().unwrap().abs() < 1e-8);
}
