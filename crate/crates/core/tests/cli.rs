use std::path::Path;
use std::process::{Command, Output};

use oneplusone::bounds::TheoryConstants;
use oneplusone::es::{RunTrace, TraceMetadata};
use oneplusone::experiments::{RateEstimate, VerifyReport};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oneplusone")).args(args).output().unwrap()
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_lists_subcommands_and_flags() {
    let out = cli(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    for sub in ["run", "bounds", "drift", "rate", "sweep", "verify"] {
        assert!(text.contains(sub), "missing {sub}");
        let sub_help = cli(&[sub, "--help"]);
        assert_eq!(sub_help.status.code(), Some(0));
        let sub_text = String::from_utf8(sub_help.stdout).unwrap();
        for flag in ["--config", "--d", "--spectrum", "--alpha-up", "--alpha-down", "--seed", "--budget", "--out"] {
            assert!(sub_text.contains(flag), "{sub} --help lacks {flag}");
        }
    }
}

#[test]
fn run_is_byte_identical_and_parses_back() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for path in [&a, &b] {
        let out = cli(&["run", "--d", "16", "--spectrum", "sphere", "--budget", "1000", "--seed", "42", "--out", arg(path)]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    assert!(!text.contains('\r'));
    let rows = RunTrace::parse_csv(&text).unwrap();
    assert_eq!(rows.len(), 1001);
    let meta: TraceMetadata =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("a.meta.json")).unwrap()).unwrap();
    assert_eq!((meta.seed, meta.budget), (42, 1000));
    assert!(!meta.version.is_empty() && !meta.generator.is_empty());
}

#[test]
fn run_writes_plot() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("t.csv");
    let svg = dir.path().join("t.svg");
    let out = cli(&["run", "--d", "8", "--spectrum", "cigar:10", "--budget", "300", "--out", arg(&csv), "--plot", arg(&svg)]);
    assert_eq!(out.status.code(), Some(0));
    assert!(std::fs::read_to_string(svg).unwrap().starts_with("<svg"));
}

#[test]
fn bounds_feasible_and_infeasible() {
    let out = cli(&["bounds", "--d", "128", "--spectrum", "sphere", "--alpha-up", "1.0078431", "--alpha-down", "0.9937695"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let c: TheoryConstants = serde_json::from_value(v["constants"].clone()).unwrap();
    c.check_invariants().unwrap();
    assert!(v["metadata"]["seed"].is_u64());

    // the p_target ≈ 0.2 pair: reported with the failed inequality, exit 1
    let out = cli(&["bounds", "--d", "256", "--spectrum", "sphere", "--alpha-up", "1.01566", "--alpha-down", "0.99611"]);
    assert_eq!(out.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["infeasibility"]["kind"], "p_target_condition");
    assert!(v["constants"].is_null());
}

#[test]
fn drift_reports_json() {
    let out = cli(&["drift", "--d", "128", "--spectrum", "sphere", "--alpha-up", "1.0078431", "--alpha-down", "0.9937695", "--n", "2000"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["estimate"]["mean"].is_f64() && v["bound"].is_f64());
    assert_eq!(out.status.code(), Some(if v["pass"] == true { 0 } else { 1 }));
}

#[test]
fn rate_output_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rate.json");
    let out = cli(&["rate", "--d", "8", "--spectrum", "sphere", "--budget", "3000", "--trials", "3", "--out", arg(&path)]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let est: RateEstimate = serde_json::from_value(v["rate"].clone()).unwrap();
    assert_eq!((est.trials, est.budget), (3, 3000));
    assert!(est.a_hat > 0.0);
}

#[test]
fn sweep_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    let out = cli(&["sweep", "--dims", "8,16", "--budget", "2000", "--trials", "2", "--out", arg(&path)]);
    // constants are infeasible at these sizes so the bracket is incomplete: exit 1
    assert!(matches!(out.status.code(), Some(0 | 1)));
    let mut reader = csv::Reader::from_path(&path).unwrap();
    assert_eq!(
        reader.headers().unwrap().iter().collect::<Vec<_>>().join(","),
        oneplusone::experiments::SWEEP_HEADER
    );
    assert_eq!(reader.records().count(), 2);
    assert!(dir.path().join("sweep.meta.json").exists() && dir.path().join("sweep.svg").exists());
}

#[test]
fn usage_and_config_errors_exit_2() {
    assert_eq!(cli(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(cli(&["run", "--d", "8", "--spectrum", "torus"]).status.code(), Some(2));
    assert_eq!(cli(&["run", "--d", "8", "--alpha-up", "0.9", "--alpha-down", "0.8"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"problem": {"spectrum": "sphere", "d": 8}, "seed": 1, "colour": "red"}"#).unwrap();
    assert_eq!(cli(&["verify", "--config", arg(&bad)]).status.code(), Some(2));
    assert_eq!(cli(&["run", "--config", "/nonexistent.json"]).status.code(), Some(2));
}

#[test]
fn verify_report_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.json");
    std::fs::write(
        &config,
        r#"{"problem": {"spectrum": "sphere", "d": 128}, "params": {"schedule": {"up": 1.0, "down": 0.8}},
            "run": {"budget": 4000, "trials": 3, "n_mc": 20000}, "seed": 3}"#,
    )
    .unwrap();
    let out = cli(&["verify", "--config", arg(&config), "--out", arg(dir.path())]);
    let report: VerifyReport =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(out.status.code(), Some(if report.all_passed() { 0 } else { 1 }));
    assert_eq!(report.seed, 3);
    assert!(report.checks.len() > 10);
    let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    RunTrace::parse_csv(&trace).unwrap();
}
