use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_finsler-lab"))
}

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(config: &Path, out: &Path) -> Output {
    bin()
        .args(["run", "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &TempDir, text: &str) -> PathBuf {
    let path = dir.path().join("config.json");
    fs::write(&path, text).unwrap();
    path
}

fn report(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

const EIGEN: &str = r#"{
  "schema": "finsler-lab/config/1",
  "experiment": "eigen",
  "model": {"kind": "gaussian_line", "curvature": 1.0},
  "grid": {"nodes": [401], "truncation": 8.0},
  "seed": 3
}"#;

#[test]
fn eigen_run_passes_and_writes_series() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let result = run(&write_config(&dir, EIGEN), &out);
    assert_eq!(
        result.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&result.stderr)
    );
    let stdout = String::from_utf8_lossy(&result.stdout);
    assert!(stdout.contains("PASS lambda_error"), "{stdout}");
    let rep = report(&out);
    assert_eq!(rep["pass"], true);
    assert_eq!(rep["schema"], "finsler-lab/report/1");
    for file in ["rayleigh_quotient.csv", "levels.csv"] {
        let csv = fs::read_to_string(out.join(file)).unwrap();
        let mut lines = csv.lines();
        let header = lines.next().unwrap();
        assert!(header
            .split(',')
            .all(|c| c.chars().all(|ch| ch.is_ascii_lowercase() || ch == '_')));
        assert!(lines.count() > 0);
    }
}

#[test]
fn corollary_report_lists_five_stages() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let result = run(&shipped("corollary-log-sobolev.json"), &out);
    assert_eq!(
        result.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&result.stderr)
    );
    let checks = report(&out)["checks"].as_array().unwrap().clone();
    let names: Vec<&str> = checks.iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert_eq!(
        names,
        [
            "ambient_equality",
            "disintegration",
            "needle_equality",
            "needle_classification",
            "poincare_equality"
        ]
    );
    let stages = fs::read_to_string(out.join("stages.csv")).unwrap();
    assert_eq!(stages.lines().count(), 6);
}

#[test]
fn malformed_config_exits_one_and_writes_nothing() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let result = run(
        &write_config(&dir, "{\"schema\": \"finsler-lab/config/1\",\n  \"experiment\": "),
        &out,
    );
    assert_eq!(result.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("line 2"), "{stderr}");
    assert!(!out.exists());
}

#[test]
fn unknown_key_is_rejected() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let text = EIGEN.replace("\"seed\": 3", "\"seed\": 3,\n  \"sede\": 4");
    let result = run(&write_config(&dir, &text), &out);
    assert_eq!(result.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&result.stderr).contains("sede"));
    assert!(!out.exists());
}

#[test]
fn invalid_field_names_the_field() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let text = EIGEN.replace("\"curvature\": 1.0", "\"curvature\": -1.0");
    let result = run(&write_config(&dir, &text), &out);
    assert_eq!(result.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&result.stderr).contains("model.curvature"));
    assert!(!out.exists());
}

#[test]
fn failing_check_exits_two_with_a_report() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let text = EIGEN.replace(
        "\"seed\": 3",
        "\"seed\": 3,\n  \"tolerances\": {\"lambda_error\": 1e-14}",
    );
    let result = run(&write_config(&dir, &text), &out);
    assert_eq!(result.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&result.stdout).contains("FAIL lambda_error"));
    let rep = report(&out);
    assert_eq!(rep["pass"], false);
    let check = rep["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == "lambda_error")
        .unwrap()
        .clone();
    assert_eq!(check["pass"], false);
    assert_eq!(check["tolerance"], 1e-14);
}

#[test]
fn reruns_match_outside_timing() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, EIGEN);
    let out = dir.path().join("out");
    let snapshot = || {
        assert_eq!(run(&config, &out).status.code(), Some(0));
        let mut rep = report(&out);
        rep.as_object_mut().unwrap().remove("timing");
        let series: Vec<Vec<u8>> = ["rayleigh_quotient.csv", "levels.csv"]
            .iter()
            .map(|f| fs::read(out.join(f)).unwrap())
            .collect();
        (rep, series)
    };
    let first = snapshot();
    assert_eq!(first, snapshot());
}

#[test]
fn seed_flag_overrides_config() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let result = bin()
        .args(["run", "--seed", "11", "--config"])
        .arg(write_config(&dir, EIGEN))
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(result.status.code(), Some(0));
    assert_eq!(report(&out)["config"]["seed"], 11);
}

#[test]
fn echoed_config_is_a_valid_config() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    assert_eq!(run(&write_config(&dir, EIGEN), &out).status.code(), Some(0));
    let echo = serde_json::to_string_pretty(&report(&out)["config"]).unwrap();
    let again = dir.path().join("again");
    let result = run(&write_config(&dir, &echo), &again);
    assert_eq!(
        result.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&result.stderr)
    );
    let config = |dir: &Path| {
        let mut c = report(dir)["config"].clone();
        c.as_object_mut().unwrap().remove("output");
        c
    };
    assert_eq!(config(&again), config(&out));
}

#[test]
fn list_is_stable_and_names_what_is_verified() {
    let first = bin().arg("list").output().unwrap();
    let second = bin().arg("list").output().unwrap();
    assert_eq!(first.status.code(), Some(0));
    assert_eq!(first.stdout, second.stdout);
    let text = String::from_utf8(first.stdout).unwrap();
    let line = |name: &str| {
        text.lines()
            .find(|l| l.starts_with(name))
            .unwrap_or_else(|| panic!("{name}"))
            .to_string()
    };
    assert!(line("eigen ").contains("Spectral gap"));
    assert!(line("rigidity ").contains("Diffeomorphic splitting"));
    for name in ["core-checks", "needle", "isoperimetric", "log-sobolev", "corollary"] {
        line(name);
    }
}

#[test]
fn every_shipped_config_passes() {
    let dir = TempDir::new().unwrap();
    let mut configs: Vec<PathBuf> = fs::read_dir(shipped(""))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    configs.sort();
    assert!(configs.len() >= 7);
    for config in configs {
        let out = dir.path().join(config.file_stem().unwrap());
        let result = run(&config, &out);
        assert_eq!(
            result.status.code(),
            Some(0),
            "{}: {}{}",
            config.display(),
            String::from_utf8_lossy(&result.stdout),
            String::from_utf8_lossy(&result.stderr)
        );
    }
}
