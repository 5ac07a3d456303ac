use std::path::{Path, PathBuf};
use std::process::Command;

fn scenario(name: &str) -> PathBuf {
    [env!("CARGO_MANIFEST_DIR"), "..", "..", "scenarios", &format!("{name}.json")].iter().collect()
}

fn msim(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_msim")).args(args).output().expect("spawn msim")
}

fn run_baseline(out: &Path, extra: &[&str]) -> std::process::Output {
    let scen = scenario("sync-baseline");
    let mut args = vec!["run", "--scenario", scen.to_str().unwrap(), "--out", out.to_str().unwrap(), "--set", "duration_ms=2000"];
    args.extend_from_slice(extra);
    msim(&args)
}

#[test]
fn run_writes_outputs_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_baseline(dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["trace.jsonl", "report.json", "timeseries.csv"] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS"));
}

#[test]
fn outputs_are_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_baseline(a.path(), &["--quiet"]);
    run_baseline(b.path(), &["--quiet"]);
    for f in ["trace.jsonl", "report.json", "timeseries.csv"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn invalid_scenario_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_baseline(dir.path(), &["--set", "n=4"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("2f+1"));
    let missing = msim(&["run", "--scenario", "/nonexistent.json", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn corrupted_replica_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_baseline(dir.path(), &["--set", "debug.double_execute=2"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn battery_aggregates_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let scen = scenario("async-windows");
    let out = msim(&[
        "battery",
        "--scenario",
        scen.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--seeds",
        "3",
        "--set",
        "duration_ms=6000",
        "--quiet",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let agg: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("battery.json")).unwrap()).unwrap();
    assert_eq!(agg["runs"], 3);
    assert_eq!(agg["passed"], 3);
    assert!(agg["async_commit_fraction"].as_f64().unwrap() > 0.5);
    assert!(dir.path().join("seed-1").join("report.json").is_file());
}

#[test]
fn battery_rejects_zero_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let scen = scenario("sync-baseline");
    let out = msim(&["battery", "--scenario", scen.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--seeds", "0"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn compare_reports_both_modes() {
    let dir = tempfile::tempdir().unwrap();
    let scen = scenario("paxos-vs-sporades");
    let out = msim(&[
        "compare",
        "--scenario",
        scen.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--set",
        "duration_ms=5000",
        "--set",
        "attack.end_ms=3000",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rep: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("compare.json")).unwrap()).unwrap();
    let seed = &rep["seeds"][0];
    assert_eq!(seed["enabled"]["fallback"], "enabled");
    assert_eq!(seed["disabled"]["fallback"], "disabled");
    assert!(seed["throughput_ratio"].as_f64().is_some());
    assert!(dir.path().join("seed-1").join("enabled").join("trace.jsonl").is_file());
}

#[test]
fn fault_free_compare_ratio_is_one() {
    let dir = tempfile::tempdir().unwrap();
    let scen = scenario("sync-baseline");
    let out = msim(&[
        "compare",
        "--scenario",
        scen.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--set",
        "duration_ms=3000",
        "--quiet",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let rep: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("compare.json")).unwrap()).unwrap();
    let ratio = rep["median_throughput_ratio"].as_f64().unwrap();
    assert!((ratio - 1.0).abs() <= 0.05);
}
