//! End-to-end checks of the `graphlim` binary: exit codes, artifact layout
//! and stderr diagnostics.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_graphlim")
}

fn run(cmd: &str, config: &str, out: &Path) -> Output {
    let dir = out.parent().unwrap();
    let cfg = dir.join("config.json");
    std::fs::write(&cfg, config).unwrap();
    Command::new(bin())
        .arg(cmd)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

const SIMULATE_OK: &str = r#"{
    "schema_version": 1,
    "model": {"model": "kuramoto_adaptive", "omega": 0.5, "alpha": 0.3, "beta": 0.2, "epsilon": 0.5},
    "n": 8,
    "t_final": 0.5,
    "dt": 0.01,
    "store_every": 10,
    "initial": {
        "u0": {"kind": "sine", "amplitude": 1.0, "frequency": 1.0},
        "w": {"kind": "gaussian_diff"}
    }
}"#;

#[test]
fn simulate_success_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let res = run("simulate", SIMULATE_OK, &out);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    for file in ["u.csv", "K.csv", "monitors.csv", "manifest.json"] {
        assert!(out.join(file).exists(), "{file} missing");
    }
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["n"], 8);
    assert!(manifest["aborted_at"].is_null());
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn malformed_json_exits_1_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let bad = SIMULATE_OK.replace("\"n\": 8,", "\"n\": 8, \"frobnicate\": true,");
    let res = run("simulate", &bad, &out);
    assert_eq!(res.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&res.stderr);
    let line = stderr.lines().last().unwrap();
    let diag: serde_json::Value = serde_json::from_str(line).expect("JSON diagnostic line");
    assert_eq!(diag["event"], "config_error");
    assert!(diag["detail"].as_str().unwrap().contains("frobnicate"), "{stderr}");
}

#[test]
fn syntax_error_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let res = run("simulate", "{ not json", &dir.path().join("out"));
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn missing_config_file_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let res = Command::new(bin())
        .args(["simulate", "--config"])
        .arg(dir.path().join("nope.json"))
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn blowup_exits_2_with_last_finite_time() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = r#"{
        "schema_version": 1,
        "model": {"model": "quadratic_blowup", "rate": 10.0},
        "n": 4,
        "t_final": 1.0,
        "dt": 0.001,
        "store_every": 100,
        "initial": {
            "u0": {"kind": "constant", "value": 0.0},
            "w": {"kind": "constant", "value": 0.0}
        }
    }"#;
    let res = run("simulate", cfg, &out);
    assert_eq!(res.status.code(), Some(2), "{}", String::from_utf8_lossy(&res.stderr));
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    let t = manifest["aborted_at"].as_f64().expect("abort time recorded");
    // du = 10 (1 + u^2) blows up at t = pi / 20
    assert!(t > 0.1 && t < 0.2, "aborted_at = {t}");
    // the trajectory up to the abort was still written
    assert!(out.join("u.csv").exists());
}

#[test]
fn picard_with_zero_max_iters_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{
        "schema_version": 1,
        "model": {"model": "kuramoto_adaptive", "omega": 0.5, "alpha": 0.3, "beta": 0.2, "epsilon": 0.5},
        "m": 4,
        "t_final": 0.5,
        "tol_l2": 1e-8,
        "max_iters": 0,
        "initial": {
            "u0": {"kind": "constant", "value": 0.1},
            "w": {"kind": "constant", "value": 1.0}
        }
    }"#;
    let res = run("picard", cfg, &dir.path().join("out"));
    assert_eq!(res.status.code(), Some(1), "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn picard_success_writes_windows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = r#"{
        "schema_version": 1,
        "model": {"model": "kuramoto_adaptive", "omega": 0.5, "alpha": 0.3, "beta": 0.2, "epsilon": 0.5},
        "m": 4,
        "t_final": 0.2,
        "tol_l2": 1e-9,
        "max_iters": 50,
        "initial": {
            "u0": {"kind": "smoothstep", "scale": 1.0},
            "w": {"kind": "gaussian_diff"}
        }
    }"#;
    let res = run("picard", cfg, &out);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let windows: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("windows.json")).unwrap()).unwrap();
    let arr = windows.as_array().unwrap();
    assert!(!arr.is_empty());
    assert!(arr.iter().all(|w| w["converged"] == true));
    assert!(out.join("u.csv").exists() && out.join("K.csv").exists());
}

#[test]
fn validate_kuramoto_exits_0() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = r#"{
        "schema_version": 1,
        "model": {"model": "kuramoto_adaptive", "omega": 0.5, "alpha": 0.3, "beta": 0.2, "epsilon": 0.5},
        "n_samples": 2000,
        "grid_n": 6,
        "discrete_samples": 200,
        "seed": 42
    }"#;
    let res = run("validate", cfg, &out);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let doc: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("validation.json")).unwrap()).unwrap();
    assert_eq!(doc["continuum"]["pass"], true);
    assert_eq!(doc["discrete"]["pass"], true);
}

#[test]
fn validate_blowup_exits_2() {
    // the blowup model's declared constants are wrong by construction
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{
        "schema_version": 1,
        "model": {"model": "quadratic_blowup", "rate": 1.0},
        "n_samples": 2000,
        "grid_n": 6,
        "discrete_samples": 100,
        "seed": 1
    }"#;
    let res = run("validate", cfg, &dir.path().join("out"));
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn env_var_thread_count_is_honoured() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg_path = dir.path().join("config.json");
    std::fs::write(&cfg_path, SIMULATE_OK).unwrap();
    let res = Command::new(bin())
        .args(["simulate", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out)
        .env("GRAPHLIM_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(0));
    let res = Command::new(bin())
        .args(["simulate", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(dir.path().join("out2"))
        .env("GRAPHLIM_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(1), "invalid GRAPHLIM_THREADS must be a config error");
}

#[test]
fn converge_small_study_reports_negative_slope() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = r#"{
        "schema_version": 1,
        "model": {"model": "kuramoto_adaptive", "omega": 0.5, "alpha": 0.3, "beta": 0.2, "epsilon": 0.5},
        "n_list": [4, 8, 16],
        "m_ref": 64,
        "t_final": 0.5,
        "dt": 0.01,
        "store_every": 10,
        "initial": {
            "u0": {"kind": "sine", "amplitude": 1.0, "frequency": 1.0},
            "w": {"kind": "gaussian_diff"}
        }
    }"#;
    let res = run("converge", cfg, &out);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert!(summary["fit"]["slope"].as_f64().unwrap() < -0.5);
    assert_eq!(summary["monotone"], true);
    let report = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(report.starts_with("N,e_sup,err_u0,err_K0,residual_integral,envelope,converged"));
    assert_eq!(report.lines().count(), 4);
}

#[test]
fn wrong_schema_version_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let bad = SIMULATE_OK.replace("\"schema_version\": 1", "\"schema_version\": 99");
    let res = run("simulate", &bad, &dir.path().join("out"));
    assert_eq!(res.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&res.stderr);
    assert!(stderr.contains("schema_version"), "{stderr}");
}
