//! The `posat` binary end to end.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn posat(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_posat"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("POSAT_WORKERS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn run_dirs(out: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir())
        .collect();
    v.sort();
    v
}

#[test]
fn honest_run_writes_outputs_and_a_csv_row() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("honest_only.toml");
    let o = posat(tmp.path(), &["run", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let dirs = run_dirs(tmp.path());
    assert_eq!(dirs.len(), 1);
    let dir = &dirs[0];
    assert!(dir.file_name().unwrap().to_str().unwrap().starts_with("run-"));
    for f in ["config.json", "trace.jsonl", "analysis.json"] {
        assert!(dir.join(f).is_file(), "{f}");
    }
    let report: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("analysis.json")).unwrap()).unwrap();
    assert_eq!(report["persistence_ok"], true);
    assert_eq!(report["nakamoto_stable"], true);

    let csv = fs::read_to_string(tmp.path().join("results.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("config_hash,seed,strategy,c,delta,k_confirm,duration"));
    assert_eq!(lines.len(), 2);
    assert!(lines[1].contains(",none,2,"));

    // Second run with the same config: directory untouched, row appended.
    let stamp = fs::metadata(dir.join("trace.jsonl")).unwrap().modified().unwrap();
    let o = posat(tmp.path(), &["run", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::metadata(dir.join("trace.jsonl")).unwrap().modified().unwrap(), stamp);
    assert_eq!(fs::read_to_string(tmp.path().join("results.csv")).unwrap().lines().count(), 3);

    // A different seed lands in a different directory.
    let o = posat(tmp.path(), &["--seed", "99", "run", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(run_dirs(tmp.path()).len(), 2);

    let trace = dir.join("trace.jsonl");
    let o = posat(tmp.path(), &["analyze", trace.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let again: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(again, report);
}

#[test]
fn bad_configs_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "c = 0\ndelta = 0.1\nk_confirm = 2\nduration = 5.0\nseed = 1\n[[honest]]\ncoins = [1.0]\n").unwrap();
    let o = posat(tmp.path(), &["run", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("c"));
    fs::write(&bad, "c = [").unwrap();
    assert_eq!(code(&posat(tmp.path(), &["run", bad.to_str().unwrap()])), 2);
    assert_eq!(code(&posat(tmp.path(), &["reproduce", "bogus"])), 2);
}

#[test]
fn fault_injection_exits_with_code_three() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("fault_injection.toml");
    assert_eq!(code(&posat(tmp.path(), &["run", cfg.to_str().unwrap()])), 3);
}

#[test]
fn sample_configs_run() {
    let tmp = tempfile::tempdir().unwrap();
    for name in ["private_attack.toml", "dynamic.toml"] {
        let cfg = configs().join(name);
        let o = posat(tmp.path(), &["run", cfg.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{name}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn solve_phi_prints_the_table() {
    let tmp = tempfile::tempdir().unwrap();
    let o = posat(tmp.path(), &["solve-phi", "--c-max", "3"]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "c,phi_c,tolerance_fraction");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("1,2.7182818"));
    let cols: Vec<f64> = lines[3].split(',').map(|x| x.parse().unwrap()).collect();
    assert!((cols[2] - 1.0 / (1.0 + cols[1])).abs() < 1e-9);
}

#[test]
fn reproduce_writes_a_report() {
    let tmp = tempfile::tempdir().unwrap();
    let o = posat(tmp.path(), &["--trials", "3", "reproduce", "long_range"]);
    assert!([0, 1].contains(&code(&o)));
    let out = stdout(&o);
    assert!(out.contains("verdict: "));
    let dirs = run_dirs(tmp.path());
    assert_eq!(dirs.len(), 1);
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(dirs[0].join("report.json")).unwrap()).unwrap();
    assert_eq!(report["attack"], "long_range");
    assert_eq!(report["arms"][0]["trials"], 3);
}

#[test]
fn sweep_writes_points_and_bands() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("s.toml");
    fs::write(&spec, "c = [1]\nbetas = [0.1, 0.4]\ntrials = 4\nhorizon = 200.0\nk_confirm = 10\n").unwrap();
    let o = posat(tmp.path(), &["sweep", spec.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("c=1 band="));
    let dir = run_dirs(tmp.path()).pop().unwrap();
    let sweep = fs::read_to_string(dir.join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 3);
    assert!(dir.join("bands.csv").is_file());
}
