//! Runs the driver end to end on tiny configurations.

use std::fs;
use std::process::Command;

use mrlod_cli::{report_exit_code, run_to_dir, Experiment, RawConfig};

fn tiny() -> RawConfig {
    RawConfig::parse("kappa = 1\nH1 = 0.5\nL = 2\nh = 0.0625\nm = 1\ntimings = false\n").unwrap()
}

#[test]
fn convergence_writes_csv_and_meta() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_to_dir(Experiment::Convergence, &tiny(), &RawConfig::default(), dir.path(), false).unwrap();
    assert_eq!(report_exit_code(&report), 0);
    let csv = fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert!(header.starts_with("schema_version,experiment,"));
    assert!(header.ends_with("status,error"));
    assert_eq!(csv.lines().count(), 1 + report.table.rows.len());
    assert!(report.table.column("status").iter().all(|s| *s == "ok"));
    let meta = fs::read_to_string(dir.path().join("convergence.meta")).unwrap();
    assert!(meta.contains("config.L=2"), "{meta}");
}

#[test]
fn reruns_without_timings_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_to_dir(Experiment::Convergence, &tiny(), &RawConfig::default(), a.path(), false).unwrap();
    run_to_dir(Experiment::Convergence, &tiny(), &RawConfig::default(), b.path(), true).unwrap();
    let read = |d: &tempfile::TempDir| fs::read(d.path().join("convergence.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn overrides_take_precedence_over_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut over = RawConfig::default();
    over.set("L", "1");
    let report = run_to_dir(Experiment::Convergence, &tiny(), &over, dir.path(), false).unwrap();
    assert!(report.table.column("L").iter().all(|l| *l == "1"));
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.cfg");
    fs::write(&cfg, "kappa = 1\nH1 = 0.5\nL = 1\nh = 0.0625\nm = 1\n").unwrap();
    let bin = env!("CARGO_BIN_EXE_mrlod");

    let ok = Command::new(bin)
        .args(["convergence", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .args(["--timings", "false"])
        .status()
        .unwrap();
    assert_eq!(ok.code(), Some(0));
    assert!(dir.path().join("convergence.csv").exists());

    let bad_key = Command::new(bin)
        .args(["convergence", "--out"])
        .arg(dir.path())
        .args(["--no_such_key", "3"])
        .output()
        .unwrap();
    assert_eq!(bad_key.status.code(), Some(1));

    let bad_mesh = Command::new(bin)
        .args(["convergence", "--out"])
        .arg(dir.path())
        .args(["--H1", "0.3"])
        .output()
        .unwrap();
    assert_ne!(bad_mesh.status.code(), Some(0));
}
