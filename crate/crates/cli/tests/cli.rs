use std::path::Path;
use std::process::{Command, Output};

fn subelliptic(args: &[&str], config: Option<&Path>, out: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_subelliptic"));
    cmd.args(args).arg("--out").arg(out);
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("run.cfg");
    std::fs::write(&path, text).unwrap();
    path
}

fn csv_column(csv: &str, name: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(col).unwrap().parse().unwrap()).collect()
}

#[test]
fn malformed_key_exits_two_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "grid.dims = 9\nflow.etta = 0.1\n");
    let out = subelliptic(&["verify"], Some(&cfg), dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("flow.etta"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = subelliptic(&["verify", "--levels", "3"], None, dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn energy_ratio_filter_gives_single_check_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = subelliptic(&["verify", "--check", "energy_ratio"], None, dir.path());
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    let checks = report["checks"].as_array().unwrap();
    assert_eq!(checks.len(), 1);
    assert_eq!(checks[0]["name"], "energy_ratio");
    assert!(checks[0]["residuals"][0].as_f64().unwrap() < 1e-6);
    assert!(dir.path().join("report.txt").exists());
    assert!(dir.path().join("report.timing.json").exists());
}

#[test]
fn constant_preset_flow_stops_at_once() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "target = flat\ngrid.dims = 9\nflow.initial = constant\n");
    let out = subelliptic(&["flow"], Some(&cfg), dir.path());
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(dir.path().join("final.hfield").exists());
}

#[test]
fn sphere_flow_with_huge_step_backtracks_and_descends() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "target = sphere\ngrid.dims = 9\nflow.eta = 1\nflow.max_steps = 20\nflow.log_interval = 1\n");
    let out = subelliptic(&["flow"], Some(&cfg), dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let e2b = csv_column(&csv, "e2b");
    assert!(e2b.windows(2).all(|w| w[1] <= w[0]));
    assert!(csv_column(&csv, "backtracks").iter().any(|b| *b > 0.0));
}

#[test]
fn energy_prints_four_keys_and_reads_flow_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "target = flat\ngrid.dims = 9\nflow.max_steps = 3\n");
    assert_eq!(subelliptic(&["flow"], Some(&cfg), dir.path()).status.code(), Some(0));
    let map = dir.path().join("final.hfield");
    let out = subelliptic(&["energy", "--map", map.to_str().unwrap()], Some(&cfg), dir.path());
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
    assert_eq!(keys.len(), 4);
    for k in ["e1b", "e2b", "tau_l2", "bh_l2"] {
        assert!(v[k].as_f64().unwrap() >= 0.0);
    }
}

#[test]
fn unreadable_field_file_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.hfield");
    let out = subelliptic(&["energy", "--map", missing.to_str().unwrap()], None, dir.path());
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(&missing, "hfield v2 n=1\n").unwrap();
    let out = subelliptic(&["energy", "--map", missing.to_str().unwrap()], None, dir.path());
    assert_eq!(out.status.code(), Some(2));
}
