use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_treegibbs")).args(args).output().unwrap()
}

fn run_into(cmd: &str, config: &Path, dir: &Path) -> Output {
    run(&[cmd, "--config", config.to_str().unwrap(), "--out", dir.to_str().unwrap()])
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn reruns_are_byte_identical() {
    let cfg = configs().join("triangle.json");
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for cmd in ["analyze", "mix"] {
        assert!(run_into(cmd, &cfg, a.path()).status.success());
        assert!(run_into(cmd, &cfg, b.path()).status.success());
    }
    for name in ["analyze.json", "mix.json", "mix.csv", "summary.txt"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name}");
    }
}

#[test]
fn wsg_writes_a_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_into("wsg", &configs().join("cusp_2_2.json"), dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cert = json(&dir.path().join("certificate.json"));
    let rho = cert["result"]["rho"].as_f64().unwrap();
    assert!(rho > 0.0 && rho < 1.0);
    assert_eq!(cert["command"], "wsg");
}

#[test]
fn count_reports_the_renewal_constant() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_into("count", &configs().join("single_edge.json"), dir.path());
    assert!(out.status.success());
    let csv = std::fs::read_to_string(dir.path().join("count.csv")).unwrap();
    assert!(csv.lines().count() > 1);
    assert!(!String::from_utf8_lossy(&out.stdout).is_empty());
}

#[test]
fn stdout_carries_json_without_out_dir() {
    let cfg = configs().join("star_probe.json");
    let out = run(&["probe", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["command"], "probe");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"graph": "g.json", "colour": 1}"#).unwrap();
    assert_eq!(run(&["analyze", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
    let cfg = configs().join("single_edge.json");
    let big = run(&["count", "--config", cfg.to_str().unwrap(), "--nmax", "100000"]);
    assert_eq!(big.status.code(), Some(4));
    let missing = dir.path().join("missing.json");
    assert_ne!(run(&["analyze", "--config", missing.to_str().unwrap()]).status.code(), Some(0));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}
