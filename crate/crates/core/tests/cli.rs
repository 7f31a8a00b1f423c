use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use robust_verify::pipeline::{read_manifest, COVERAGE_HEADER};

const BIN: &str = env!("CARGO_BIN_EXE_robust-verify");

const TINY: &str = r#"{
  "env": "hat1d",
  "betas": [0.01],
  "n_test": 200,
  "explore": {
    "iterations": 2,
    "samples_per_region": 40,
    "hidden_widths": [8, 8],
    "initial_train": {"epochs": 30},
    "train": {"epochs": 10}
  },
  "icp_train": {"epochs": 20},
  "seed": 3
}"#;

fn cli(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("ROBUST_VERIFY_SEED")
        .output()
        .unwrap()
}

fn tiny_run(dir: &Path) -> Output {
    let cfg = dir.join("cfg.json");
    fs::write(&cfg, TINY).unwrap();
    let out = dir.join("run");
    cli(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
}

#[test]
fn run_then_report() {
    let tmp = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let out = tiny_run(tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(start.elapsed() < Duration::from_secs(60));

    let run = tmp.path().join("run");
    let manifest = read_manifest(&run).unwrap();
    assert!(manifest.complete);
    for p in manifest.artifact_paths() {
        assert!(run.join(&p).is_file(), "missing {p}");
    }
    let coverage = fs::read_to_string(run.join("coverage.csv")).unwrap();
    assert_eq!(coverage.lines().next().unwrap(), COVERAGE_HEADER.join(","));

    // sentinel cells must reach the report untouched
    let mut lines: Vec<String> = coverage.lines().map(str::to_owned).collect();
    let mut cells: Vec<String> = lines[1].split(',').map(str::to_owned).collect();
    cells[5] = "0.123456789012345678".into();
    cells[7] = "1e-300".into();
    lines[1] = cells.join(",");
    fs::write(run.join("coverage.csv"), lines.join("\n") + "\n").unwrap();

    let svg = tmp.path().join("trace.svg");
    let rep = cli(&["report", run.to_str().unwrap(), "--svg", svg.to_str().unwrap()]);
    assert!(rep.status.success(), "{}", String::from_utf8_lossy(&rep.stderr));
    let report = fs::read_to_string(run.join("report.csv")).unwrap();
    let mut rows = report.lines();
    let header: Vec<&str> = rows.next().unwrap().split(',').collect();
    assert_eq!(&header[..9], COVERAGE_HEADER);
    assert_eq!(&header[9..], ["epsilon", "phi_l", "all_certified"]);
    let first: Vec<&str> = rows.next().unwrap().split(',').collect();
    assert_eq!(first[..9], cells.iter().map(String::as_str).collect::<Vec<_>>()[..]);
    assert_eq!(first[9], format!("{}", manifest.runs[0].epsilon));

    let text = fs::read_to_string(&svg).unwrap();
    let doc = roxmltree::Document::parse(&text).unwrap();
    assert_eq!(doc.root_element().tag_name().name(), "svg");
    assert!(doc.descendants().any(|n| n.tag_name().name() == "polyline"));
}

#[test]
fn runs_are_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(tiny_run(a.path()).status.success());
    assert!(tiny_run(b.path()).status.success());
    let read = |d: &Path| fs::read(d.join("run/coverage.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    let inn = |d: &Path| fs::read(d.join("run/beta_0.01/inn.json")).unwrap();
    assert_eq!(inn(a.path()), inn(b.path()));
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"betas": [0.01]}"#).unwrap();
    let out = cli(&["run", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("env"));

    fs::write(&cfg, r#"{"env": "hat1d", "lambda": -1}"#).unwrap();
    let out = cli(&["run", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn report_rejects_missing_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let out = cli(&["report", tmp.path().join("nope").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn envs_list_names_every_environment() {
    let out = cli(&["envs", "list"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in robust_verify::envs::names() {
        assert!(text.contains(name), "{name}");
    }
}

#[test]
fn verify_prints_a_record() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(tiny_run(tmp.path()).status.success());
    let model = tmp.path().join("run/beta_0.01/inn.json");
    let region = tmp.path().join("box.json");
    fs::write(&region, r#"{"lo": [0.0], "hi": [1.0]}"#).unwrap();
    for objective in ["max", "min", "uncertainty"] {
        let out = cli(&[
            "verify",
            "--model",
            model.to_str().unwrap(),
            "--box",
            region.to_str().unwrap(),
            "--objective",
            objective,
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        assert!(v["value_lo"].as_f64().unwrap() <= v["value_hi"].as_f64().unwrap());
    }
}
