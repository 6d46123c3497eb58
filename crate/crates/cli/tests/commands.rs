use std::path::Path;
use std::process::{Command, Output};

fn ccpi(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccpi"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn error_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|e| panic!("not JSON ({e}): {text}"))
}

fn body(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(String::from)
        .collect()
}

#[test]
fn solve_writes_trace_and_result() {
    let dir = tempfile::tempdir().unwrap();
    let out = ccpi(&["solve", "--seed", "3", "--set", "solver.samples=5000"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trace = std::fs::read_to_string(dir.path().join("dual_trace.csv")).unwrap();
    let mut lines = trace.lines();
    let meta = lines.next().unwrap();
    assert!(meta.starts_with("# tool=ccpi ") && meta.contains("config_hash=") && meta.ends_with("seed=3"));
    assert_eq!(lines.next().unwrap(), "iteration,eta,p_fail,std_error,ess");
    let result = body(&dir.path().join("solve_result.csv"));
    assert_eq!(result[0], "eta,p_fail,std_error,mode,converged,iterations");
    assert_eq!(result.len(), 2);
}

#[test]
fn malformed_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "preset = \"velocity\"\n[problem]\nrisk_tolerance = \"high\"\n").unwrap();
    let out = ccpi(&["solve", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let e = error_json(&out);
    assert_eq!(e["error"], "config");
    assert_eq!(e["field"], "problem.risk_tolerance");
}

#[test]
fn bad_override_and_unknown_preset_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = ccpi(&["solve", "--set", "solver.grid=2"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["field"], "solver.grid");
    let out = ccpi(&["solve", "--config", "boat"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["field"], "preset");
}

#[test]
fn usage_errors_are_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = ccpi(&["frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "usage");
    let out = ccpi(&["sweep"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["field"], "--deltas");
}

#[test]
fn sweep_table_and_trend_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = ccpi(&["sweep", "--deltas", "0.3,0.9", "--set", "solver.samples=5000"], dir.path());
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().any(|l| l.starts_with("trend: eta_violations=")), "{stdout}");
    let rows = body(&dir.path().join("sweep.csv"));
    assert_eq!(rows.len(), 3);
    assert!(rows[0].contains("eta_trend_violation"));
    assert!(rows[2].starts_with("0.9,"));
}

#[test]
fn compare_with_tiny_sample_flags_wide_error_bars() {
    let dir = tempfile::tempdir().unwrap();
    let out = ccpi(
        &["compare", "--etas", "0.13", "--set", "solver.samples=100", "--set", "solver.grid=24"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = body(&dir.path().join("compare.csv"));
    assert_eq!(rows.len(), 10);
    assert!(rows[1..].iter().all(|r| r.ends_with(",true")));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("eta=0.13 value"));
}

#[test]
fn compare_rejects_the_car_model() {
    let dir = tempfile::tempdir().unwrap();
    let out = ccpi(&["compare", "--config", "car"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn zero_rollouts_give_header_only_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = ccpi(&["rollout", "--eta", "0.1", "--count", "0", "--dump"], dir.path());
    assert!(out.status.success());
    assert_eq!(body(&dir.path().join("rollouts.csv")), vec!["id,eta,exit_time,x0_final,x1_final,exit_class"]);
    assert_eq!(body(&dir.path().join("trajectories.csv")), vec!["id,time,x0,x1,exit_class"]);
}

#[test]
fn rollouts_tag_exit_class_and_respect_seed() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["rollout", "--eta", "0.1", "--count", "6", "--seed", "5", "--dump", "--set", "solver.control_samples=32"];
    let a = ccpi(&args, &dir.path().join("a"));
    let b = ccpi(&args, &dir.path().join("b"));
    assert!(a.status.success() && b.status.success());
    let ra = body(&dir.path().join("a/rollouts.csv"));
    assert_eq!(ra, body(&dir.path().join("b/rollouts.csv")));
    assert_eq!(ra.len(), 7);
    assert!(ra[1..].iter().all(|r| r.ends_with(",boundary") || r.ends_with(",horizon")));
    let traj = body(&dir.path().join("a/trajectories.csv"));
    assert!(traj.len() > 7);
}

#[test]
fn tighter_tolerance_fails_less_often() {
    let dir = tempfile::tempdir().unwrap();
    let mut fractions = Vec::new();
    for delta in ["0.1", "0.9"] {
        let set = format!("problem.risk_tolerance={delta}");
        let out = ccpi(
            &[
                "rollout", "--count", "40", "--seed", "2", "--set", &set, "--set", "solver.samples=5000", "--set",
                "solver.control_samples=100",
            ],
            &dir.path().join(delta),
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let rows = body(&dir.path().join(delta).join("rollouts.csv"));
        let hits = rows[1..].iter().filter(|r| r.ends_with(",boundary")).count();
        fractions.push(hits as f64 / 40.0);
    }
    assert!(fractions[0] < fractions[1], "{fractions:?}");
}
