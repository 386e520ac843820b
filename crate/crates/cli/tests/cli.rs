//! End-to-end checks of the `istn` binary.

use std::fs;
use std::process::Command;

fn istn() -> Command {
    Command::new(env!("CARGO_BIN_EXE_istn"))
}

/// Minimal one-of-everything configuration with light demand, as JSON.
fn tiny_config_json() -> String {
    r#"{
        "num_leo": 1,
        "num_bs": 1,
        "num_ue": 1,
        "num_sc": 1,
        "max_sc_per_ue": 1,
        "bs_per_cluster": 1,
        "leo_initial_positions": [[39.95, 20.0]],
        "demand_bits": 5e4
    }"#
    .to_string()
}

#[test]
fn run_reports_completion() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    fs::write(&cfg_path, tiny_config_json()).unwrap();
    let out_path = dir.path().join("run.json");

    let output = istn()
        .args([
            "run",
            "--config",
            cfg_path.to_str().unwrap(),
            "--seed",
            "3",
            "--algorithm",
            "greedy",
            "--out",
            out_path.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("algorithm: greedy"), "stdout: {stdout}");
    assert!(stdout.contains("slots_used:"), "stdout: {stdout}");
    assert!(!stdout.contains("unmet"), "stdout: {stdout}");
    assert!(stdout.contains("residual_bits: 0.000"), "stdout: {stdout}");

    let doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(doc["algorithm"], "greedy");
    let ts_used = doc["ts_used"].as_u64().unwrap();
    assert!(ts_used >= 1);
    assert_eq!(doc["slots"].as_array().unwrap().len() as u64, ts_used);
}

#[test]
fn run_iterative_scheduler_completes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    fs::write(&cfg_path, tiny_config_json()).unwrap();

    let output = istn()
        .args([
            "run",
            "--config",
            cfg_path.to_str().unwrap(),
            "--seed",
            "3",
            "--algorithm",
            "sca",
        ])
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("algorithm: sca"), "stdout: {stdout}");
    assert!(stdout.contains("slots_used:"), "stdout: {stdout}");
    assert!(!stdout.contains("unmet"), "stdout: {stdout}");
    assert!(stdout.contains("feasible true"), "stdout: {stdout}");
    assert!(!stdout.contains("feasible false"), "stdout: {stdout}");
}

#[test]
fn sweep_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let spec_path = dir.path().join("sweep.json");
    let out_dir = dir.path().join("out");
    let spec = format!(
        r#"{{
            "base": {},
            "parameter": "ue_max_power",
            "values": [0.2512],
            "seeds": [1],
            "algorithms": ["greedy"]
        }}"#,
        tiny_config_json()
    );
    fs::write(&spec_path, spec).unwrap();

    let output = istn()
        .args([
            "sweep",
            "--spec",
            spec_path.to_str().unwrap(),
            "--out-dir",
            out_dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    assert!(out_dir.join("results.csv").exists());
    assert!(out_dir.join("manifest.json").exists());
    assert!(out_dir.join("curve_ue_max_power_greedy.dat").exists());
    let csv = fs::read_to_string(out_dir.join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2, "header plus one row: {csv}");
}

#[test]
fn trace_prints_objective_history() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    fs::write(&cfg_path, tiny_config_json()).unwrap();

    let output = istn()
        .args([
            "trace",
            "--config",
            cfg_path.to_str().unwrap(),
            "--seed",
            "5",
            "--ts",
            "1",
        ])
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("iteration   0"), "stdout: {stdout}");
    assert!(stdout.contains("converged: true"), "stdout: {stdout}");
}

#[test]
fn bad_arguments_fail() {
    let output = istn().args(["run", "--algorithm", "nope"]).output().unwrap();
    assert!(!output.status.success());

    let output = istn()
        .args(["sweep", "--spec", "/nonexistent.json", "--out-dir", "/tmp/x"])
        .output()
        .unwrap();
    assert!(!output.status.success());
}
