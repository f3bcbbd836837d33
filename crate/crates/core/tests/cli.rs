//! End-to-end runs of the `frac-hessian` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_frac-hessian"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn constants_report_and_range_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["constants", "--n", "3", "--s", "0.75", "--L", "1", "--SC", "1", "--eta0", "0.1"]);
    assert_eq!(out.status.code(), Some(0));
    let doc = json(&dir.path().join("constants.json"));
    let c1 = doc["result"]["C1"]["closed_form"].as_f64().unwrap();
    assert!((c1 - 8.0 * 2f64.sqrt()).abs() < 1e-12);
    assert_eq!(doc["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(doc["config"]["eta0"].as_f64(), Some(0.1));

    let bad = run(dir.path(), &["constants", "--s", "0.4"]);
    assert_eq!(bad.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&bad.stderr);
    assert!(msg.contains("s must lie in (1/2, 1) for C1"), "{msg}");

    assert_eq!(run(dir.path(), &["constants", "--n", "2"]).status.code(), Some(0));
    let doc = json(&dir.path().join("constants.json"));
    let (mu1, c1) = (
        doc["result"]["mu1"]["closed_form"].as_f64().unwrap(),
        doc["result"]["C1"]["closed_form"].as_f64().unwrap(),
    );
    assert!((mu1 - 0.25 * c1).abs() < 1e-12 * c1);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "n = 4\ns = 0.6\neta0 = 0.05\n").unwrap();
    let cfg = cfg.to_str().unwrap();
    assert_eq!(run(dir.path(), &["constants", "--config", cfg, "--s", "0.9"]).status.code(), Some(0));
    let doc = json(&dir.path().join("constants.json"));
    assert_eq!(doc["config"]["n"], 4);
    assert_eq!(doc["config"]["s"].as_f64(), Some(0.9));
    assert_eq!(doc["config"]["eta0"].as_f64(), Some(0.05));
    fs::write(dir.path().join("bad.cfg"), "unknown_key = 3\n").unwrap();
    let bad = dir.path().join("bad.cfg");
    assert_eq!(run(dir.path(), &["constants", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn envelope_check_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let out = run(dir.path(), &["envelope-check", "--samples", "60", "--seed", "9"]);
        assert_eq!(out.status.code(), Some(0));
    }
    let read = |d: &tempfile::TempDir| fs::read(d.path().join("envelope_check.json")).unwrap();
    assert_eq!(read(&a), read(&b));
    let out = run(a.path(), &["envelope-check", "--n", "3", "--k", "3", "--samples", "60"]);
    assert_eq!(out.status.code(), Some(0));
    let doc = json(&a.path().join("envelope_check.json"));
    assert!(doc["result"]["summary"]["max_det_rel_error"].as_f64().unwrap() < 1e-9);
}

#[test]
fn affine_infimum_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["inf", "--profile", "affine"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&dir.path().join("inf.json"))["result"]["value"].as_f64(), Some(0.0));
}

#[test]
fn eval_paths_agree() {
    let dir = tempfile::tempdir().unwrap();
    let mut values = Vec::new();
    for path in ["z", "y"] {
        let out = run(dir.path(), &["eval", "--b", "1,2,3", "--x", "0.1,-0.2,0", "--path", path]);
        assert_eq!(out.status.code(), Some(0));
        values.push(json(&dir.path().join("eval.json"))["result"]["operator"]["value"].as_f64().unwrap());
    }
    assert!((values[0] - values[1]).abs() < 1e-4 * values[0].abs());
    let out = run(dir.path(), &["eval", "--n", "3", "--x", "0,0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn experiment_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["eigencheck", "--eps", "0.05", "--samples", "100"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.path().join("eigencheck.csv").exists());
    assert_eq!(run(dir.path(), &["eigencheck", "--eps", "0.9"]).status.code(), Some(2));
    let out = run(
        dir.path(),
        &["blowup", "--n", "3", "--s", "0.75", "--n-angular", "16", "--count", "5"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let doc = json(&dir.path().join("blowup.json"));
    assert!((doc["result"]["summary"]["slope"].as_f64().unwrap() + 0.75).abs() < 0.05);
    let out = run(dir.path(), &["subspace", "--frames", "4", "--n-angular", "12"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn solve_writes_grid_and_history() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &["solve", "--n", "2", "--profile", "smoothed_cone", "--m", "13", "--R", "3", "--directions", "32"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["u.json", "u.csv", "u.bin", "u_residual.csv", "solve.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let doc = json(&dir.path().join("solve.json"));
    assert_eq!(doc["result"]["converged"], true);
    let bad = run(dir.path(), &["solve", "--n", "3", "--m", "9"]);
    assert_eq!(bad.status.code(), Some(2));
    let picard = run(
        dir.path(),
        &["solve", "--m", "17", "--R", "4", "--directions", "32", "--method", "picard", "--damping", "0.5"],
    );
    assert_eq!(picard.status.code(), Some(1));
}
