use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ospde_cli::{parse_config, EXIT_CHECK_FAILED, EXIT_ERROR, EXIT_PASS};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn ospde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ospde")).args(args).output().expect("binary runs")
}

fn run(sub: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![sub, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    ospde(&args)
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "manifest.toml")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn minimal_config_echoes_defaults_in_the_golden_manifest() {
    let cfg = parse_config(&data("minimal.toml")).unwrap();
    let golden = fs::read_to_string(data("minimal.manifest.toml")).unwrap();
    assert_eq!(cfg.to_manifest("simulate"), golden);
}

#[test]
fn zero_data_simulation_is_all_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("simulate", &data("zero.toml"), dir.path(), &[]);
    assert_eq!(code(&o), EXIT_PASS, "{}", String::from_utf8_lossy(&o.stderr));
    for p in 0..2 {
        let csv = fs::read_to_string(dir.path().join(format!("trajectory_path{p}.csv"))).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("k,t,node,x,u,nu_mass"));
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), 6 * 9);
        for r in rows {
            let cols: Vec<&str> = r.split(',').collect();
            assert_eq!((cols[4], cols[5]), ("0", "0"), "{r}");
        }
    }
    assert!(dir.path().join("report.json").exists());
    assert!(dir.path().join("manifest.toml").exists());
}

#[test]
fn unknown_key_exits_2_and_names_the_nearest_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[run]\nseed = 1\n[grid]\n[scheme]\npenaltyy = 10.0\n").unwrap();
    let o = run("simulate", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(code(&o), EXIT_ERROR);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("penaltyy") && err.contains("`penalty`"), "{err}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn missing_seed_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[run]\npaths = 2\n[grid]\n").unwrap();
    let o = run("simulate", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(code(&o), EXIT_ERROR);
    assert!(String::from_utf8_lossy(&o.stderr).contains("run.seed"));
}

#[test]
fn unreadable_config_and_zero_paths_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("simulate", &dir.path().join("absent.toml"), dir.path(), &[]);
    assert_eq!(code(&o), EXIT_ERROR);
    let o = run("simulate", &data("zero.toml"), dir.path(), &["--paths", "0"]);
    assert_eq!(code(&o), EXIT_ERROR);
}

#[test]
fn unwritable_output_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let o = run("simulate", &data("zero.toml"), &blocker.join("out"), &[]);
    assert_eq!(code(&o), EXIT_ERROR);
}

#[test]
fn ordered_comparison_passes_and_reversed_drift_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("verify", &data("comparison.toml"), &dir.path().join("ok"), &[]);
    assert_eq!(code(&o), EXIT_PASS, "{}", String::from_utf8_lossy(&o.stdout));

    let text = fs::read_to_string(data("comparison.toml")).unwrap().replace("obstacle_shift = 0.05", "obstacle_shift = 0.05\nf_shift = -1.5");
    let neg = dir.path().join("neg.toml");
    fs::write(&neg, text).unwrap();
    let o = run("verify", &neg, &dir.path().join("neg"), &[]);
    assert_eq!(code(&o), EXIT_CHECK_FAILED);
    let report = fs::read_to_string(dir.path().join("neg/report.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&report).unwrap();
    let checks = v["report"]["checks"].as_array().unwrap();
    let cmp = checks.iter().find(|c| c["name"] == "comparison").unwrap();
    assert_eq!(cmp["status"], "fail");
    assert!(String::from_utf8_lossy(&o.stdout).contains("failed: comparison"));
    let csv = fs::read_to_string(dir.path().join("neg/residuals.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| l.starts_with("comparison,")).count(), 20);
}

#[test]
fn identical_runs_are_bitwise_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&run("verify", &data("comparison.toml"), &a, &[])), EXIT_PASS);
    assert_eq!(code(&run("verify", &data("comparison.toml"), &b, &[])), EXIT_PASS);
    assert_eq!(files(&a), files(&b));
}

#[test]
fn manifest_rerun_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&run("simulate", &data("comparison.toml"), &a, &["--paths", "3", "--seed", "99"])), EXIT_PASS);
    assert_eq!(code(&run("simulate", &a.join("manifest.toml"), &b, &[])), EXIT_PASS);
    assert_eq!(files(&a), files(&b));
    let m = fs::read_to_string(b.join("manifest.toml")).unwrap();
    assert!(m.contains("seed = 99") && m.contains("paths = 3"));
}

#[test]
fn seed_override_changes_the_noise() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run("simulate", &data("comparison.toml"), &a, &["--paths", "1", "--seed", "1"]);
    run("simulate", &data("comparison.toml"), &b, &["--paths", "1", "--seed", "2"]);
    assert_ne!(fs::read(a.join("trajectory_path0.csv")).unwrap(), fs::read(b.join("trajectory_path0.csv")).unwrap());
}
