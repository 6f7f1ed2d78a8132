use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn eqfree(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eqfree"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .arg("--quiet")
        .env_remove("EQFREE_THREADS")
        .output()
        .expect("binary runs")
}

fn manifest(dir: &Path, command: &str) -> Value {
    let text = std::fs::read_to_string(dir.join(format!("{command}.manifest.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = r#"
[sampling]
n_samples = 24
stop_time_mean = 50.0
stop_time_shift = 50.0
amplitude_range = [1.0, 4.0]

[dmap]
max_candidates = 6

[downsample]
target = 12
radial_target = 18
"#;

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("small.toml");
    std::fs::write(&p, SMALL).unwrap();
    p
}

#[test]
fn simulate_writes_waterfall_and_sigma() {
    let dir = tempfile::tempdir().unwrap();
    let out = eqfree(dir.path(), &["simulate", "--t-end", "20", "--amplitude", "2"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let sigma = std::fs::read_to_string(dir.path().join("sigma.csv")).unwrap();
    let lines: Vec<&str> = sigma.lines().collect();
    assert_eq!(lines[0], "t,sigma");
    assert_eq!(lines.len(), 22);
    let head = std::fs::read_to_string(dir.path().join("headways.csv")).unwrap();
    assert_eq!(head.lines().next().unwrap().split(',').count(), 31);
    let m = manifest(dir.path(), "simulate");
    assert_eq!(m["status"], "ok");
    assert_eq!(m["config"]["simulate"]["amplitude"], 2.0);
    assert_eq!(m["outputs"].as_array().unwrap().len(), 2);
}

#[test]
fn zero_amplitude_keeps_sigma_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = eqfree(dir.path(), &["simulate", "--t-end", "5", "--amplitude", "0"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let sigma = std::fs::read_to_string(dir.path().join("sigma.csv")).unwrap();
    for line in sigma.lines().skip(1) {
        let s: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(s.abs() < 1e-9, "{line}");
    }
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[model]\nspeed_limit = 3.0\n").unwrap();
    let out = eqfree(dir.path(), &["simulate", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("speed_limit"), "{}", stderr(&out));

    let out = eqfree(dir.path(), &["simulate", "--set", "dmap.threshold=1.5"]);
    assert_eq!(out.status.code(), Some(2));

    let out = eqfree(dir.path(), &["simulate", "--threads", "0"]);
    assert_eq!(out.status.code(), Some(2));

    let missing = dir.path().join("nope.csv");
    let m = missing.to_str().unwrap();
    let out = eqfree(dir.path(), &["continue-macro", "--data", m, "--map", m]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(!dir.path().join("continue-macro.manifest.json").exists());
}

#[test]
fn numerical_failure_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = eqfree(
        dir.path(),
        &["continue-micro", "--set", "initial_wave.newton_max_iter=1", "--set", "initial_wave.transient=500"],
    );
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(stderr(&out).contains("numerical failure"), "{}", stderr(&out));
    let m = manifest(dir.path(), "continue-micro");
    assert_eq!(m["status"], "failed");
    assert!(m["error"].as_str().unwrap().contains("no convergence"));
}

#[test]
fn pipeline_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = small_config(a.path());
    let cfg = cfg.to_str().unwrap();
    for dir in [a.path(), b.path()] {
        let out = eqfree(dir, &["generate", "-c", cfg, "--seed", "11"]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    for name in ["dataset.csv", "dataset.json"] {
        assert_eq!(
            std::fs::read(a.path().join(name)).unwrap(),
            std::fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
    let ma = manifest(a.path(), "generate");
    let mb = manifest(b.path(), "generate");
    assert_eq!(ma["rng_seed"], 11);
    assert_eq!(ma["outputs"][0]["sha256"], mb["outputs"][0]["sha256"]);

    let d = a.path();
    let data = d.join("dataset.csv");
    let data = data.to_str().unwrap();
    let out = eqfree(d, &["align", "-c", cfg, "--data", data]);
    assert!(out.status.success(), "{}", stderr(&out));
    let aligned = d.join("aligned.csv");
    let aligned = aligned.to_str().unwrap();
    let out = eqfree(d, &["embed", "-c", cfg, "--data", aligned]);
    assert!(out.status.success(), "{}", stderr(&out));
    let sel = std::fs::read_to_string(d.join("selection.csv")).unwrap();
    assert!(sel.starts_with("j,r,selected,fit_scale\n1,1"), "{sel}");
    let m = manifest(d, "embed");
    assert_eq!(m["inputs"].as_array().unwrap().len(), 2);
    let map = d.join("map.csv");
    let map = map.to_str().unwrap();

    let out = eqfree(d, &["validate-ops", "-c", cfg, "--data", aligned, "--map", map]);
    assert!(out.status.success(), "{}", stderr(&out));
    let m = manifest(d, "validate-ops");
    assert!(m["summary"]["lift_mean_rel"].as_f64().unwrap() < 1e-6);
    assert!(m["summary"]["restriction_mean_rel"].as_f64().is_some());

    let out = eqfree(d, &["downsample", "-c", cfg, "--data", aligned, "--map", map]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(manifest(d, "downsample")["summary"]["rows"], 12);

    // a map only fits the dataset it was built on
    let out = eqfree(d, &["downsample", "-c", cfg, "--data", data, "--map", map]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn threads_fall_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_eqfree"))
        .args(["simulate", "--t-end", "1", "--quiet", "--out"])
        .arg(dir.path())
        .env("EQFREE_THREADS", "1")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(manifest(dir.path(), "simulate")["threads"], 1);
}

#[test]
fn micro_continuation_and_floquet() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = eqfree(d, &["continue-micro"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let folds = manifest(d, "continue-micro")["summary"]["folds"].clone();
    let (v0, sigma) = (folds[0][0].as_f64().unwrap(), folds[0][1].as_f64().unwrap());
    assert!((v0 - 0.97).abs() < 0.01 && (sigma - 0.25).abs() < 0.02, "{folds}");
    let branch = std::fs::read_to_string(d.join("micro_branch.csv")).unwrap();
    assert!(branch.starts_with("index,v0,c,sigma,stable,fold_flag\n"));

    let out = eqfree(d, &["floquet", "--fold"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("floquet.json")).unwrap()).unwrap();
    assert_eq!(report["zero_multiplicity"], 2);
    let rows = std::fs::read_to_string(d.join("floquet.csv")).unwrap();
    assert_eq!(rows.lines().count(), 61);
}
