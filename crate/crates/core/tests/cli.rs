use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_pmefront");

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(args: &[&str], cfg: &Path, out: &Path, sets: &[&str]) -> i32 {
    let mut cmd = Command::new(BIN);
    cmd.args(args).arg("--config").arg(cfg).arg("--out").arg(out);
    for s in sets {
        cmd.arg("--set").arg(s);
    }
    cmd.output().unwrap().status.code().unwrap()
}

fn manifest(out: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap()
}

const QUICK: &[&str] = &["discretization.nx=41", "pme.t_end=1.05"];

#[test]
fn quadratic_pressure_run_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let code = run(&["solve-pme"], &config("barenblatt-1d.toml"), dir.path(), QUICK);
    assert_eq!(code, 0);
    assert!(dir.path().join("front.csv").exists());
    let m = manifest(dir.path());
    assert_eq!(m["exit"]["code"], 0);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn steep_exponent_is_refused_with_outflow_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let mut sets = QUICK.to_vec();
    sets.push("problem.m=3.0");
    let code = run(&["solve-pme"], &config("barenblatt-1d.toml"), dir.path(), &sets);
    assert_eq!(code, 2);
    let m = manifest(dir.path());
    assert_eq!(m["exit"]["code"], 2);
    assert!(m.to_string().contains("(B)"), "{m}");
}

#[test]
fn invalid_resolution_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let code = run(&["solve-pme"], &config("barenblatt-1d.toml"), dir.path(), &["discretization.nx=-5"]);
    assert_eq!(code, 1);
    assert_eq!(manifest(dir.path())["exit"]["code"], 1);
}

#[test]
fn unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let code = run(&["solve-pme"], &config("barenblatt-1d.toml"), dir.path(), &["discretization.nxx=41"]);
    assert_eq!(code, 1);
}

#[test]
fn repeated_runs_are_bit_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        assert_eq!(run(&["solve-pme"], &config("barenblatt-1d.toml"), d.path(), QUICK), 0);
    }
    for f in ["front.csv", "h_final.csv", "h_final.json", "fichera.json"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs");
    }
}

#[test]
fn resolved_config_reproduces_the_run() {
    let (out, keep) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert_eq!(run(&["solve-pme"], &config("barenblatt-1d.toml"), out.path(), QUICK), 0);
    let resolved = keep.path().join("resolved.toml");
    std::fs::copy(out.path().join("resolved-config.toml"), &resolved).unwrap();
    let first = manifest(out.path());
    let front = std::fs::read(out.path().join("front.csv")).unwrap();
    assert_eq!(run(&["solve-pme"], &resolved, out.path(), &[]), 0);
    let second = manifest(out.path());
    for key in ["config_hash", "diagnostics", "exit", "artifacts"] {
        assert_eq!(first[key], second[key], "{key}");
    }
    assert!(front == std::fs::read(out.path().join("front.csv")).unwrap());
}

#[test]
fn fichera_check_prints_a_classification() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(BIN)
        .args(["check-fichera", "--config"])
        .arg(config("barenblatt-1d.toml"))
        .arg("--out")
        .arg(dir.path())
        .args(["--set", "discretization.nx=41"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("satisfies"));
    assert!(dir.path().join("fichera.json").exists());
}
