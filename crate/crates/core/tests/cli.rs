use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use tempfile::TempDir;
use ttcm::io;

fn repo_file(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn ttcm(args: &[&str]) -> i32 {
    let out = Command::new(env!("CARGO_BIN_EXE_ttcm"))
        .args(args)
        .env("TTCM_THREADS", "1")
        .output()
        .expect("binary runs");
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn demo_config() -> PathBuf {
    repo_file("demo/config.json")
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    fs::write(&path, text).unwrap();
    path
}

const SMALL: &str = r#"{
  "regions": [
    {"id": "roi0", "K1": 0.3, "k2": 0.2, "k3": 0.1, "k4": 0.05},
    {"id": "roi1", "K1": 0.5, "k2": 0.4, "k3": 0.05, "k4": 0.02},
    {"id": "roi2", "K1": 0.25, "k2": 0.15, "k3": 0.2, "k4": 0.1}
  ],
  "input": {"terms": [{"lambda": 1.0, "mu": -0.1}, {"lambda": 3.0, "mu": -1.2}]}
}"#;

#[test]
fn simulate_reproduces_golden_table() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("tacs.csv");
    assert_eq!(ttcm(&["simulate", "--config", s(&demo_config()), "--grid", "log:0.25,60,16", "--out", s(&out)]), 0);
    let table = io::read_tacs_file(&out).unwrap();
    assert_eq!((table.curves().len(), table.len()), (7, 16));
    assert_eq!(fs::read(&out).unwrap(), fs::read(repo_file("demo/tacs.csv")).unwrap());
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("tacs.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["exit_code"], 0);
}

#[test]
fn simulate_input_errors() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("t.csv");
    let cfg = demo_config();
    assert_eq!(ttcm(&["simulate", "--config", s(&cfg), "--grid", "list:0,1,2", "--out", s(&out)]), 2);
    assert_eq!(ttcm(&["simulate", "--config", s(&cfg), "--grid", "list:1,2", "--out", s(&out), "--vb", "0.05"]), 2);
    let missing = dir.path().join("nope.json");
    assert_eq!(ttcm(&["simulate", "--config", s(&missing), "--grid", "list:1,2", "--out", s(&out)]), 2);
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("t.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["exit_code"], 2);
    assert!(manifest["error"].is_string());
}

#[test]
fn simulate_with_mixing_writes_sidecar() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("pet.csv");
    let code = ttcm(&[
        "simulate", "--config", s(&demo_config()), "--grid", "log:0.25,60,16", "--out", s(&out),
        "--vb", "0.05", "--attenuation", "0.6,-0.05,-0.8",
    ]);
    assert_eq!(code, 0);
    let wb = io::read_wb(fs::File::open(dir.path().join("pet.wb.csv")).unwrap()).unwrap();
    assert_eq!(wb.len(), 16);
    let tissue = io::read_tacs_file(&repo_file("demo/tacs.csv")).unwrap();
    let pet = io::read_tacs_file(&out).unwrap();
    let (ct, cpet) = (tissue.curves()[0].1[5], pet.curves()[0].1[5]);
    assert!((cpet - (0.95 * ct + 0.05 * wb[5].1)).abs() <= 1e-12 * cpet);
}

#[test]
fn fit_guards_and_determinism() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "small.json", SMALL);
    let short = dir.path().join("short.csv");
    assert_eq!(ttcm(&["simulate", "--config", s(&cfg), "--grid", "log:0.25,60,11", "--out", s(&short)]), 0);
    assert_eq!(ttcm(&["fit", "--tacs", s(&short), "--p", "2", "--out", s(&dir.path().join("f.json"))]), 4);

    let tacs = dir.path().join("tacs.csv");
    assert_eq!(ttcm(&["simulate", "--config", s(&cfg), "--grid", "log:0.25,60,12", "--out", s(&tacs)]), 0);
    let run = |name: &str| {
        let out = dir.path().join(name);
        let code = ttcm(&["fit", "--tacs", s(&tacs), "--p", "2", "--out", s(&out), "--starts", "2", "--seed", "7", "--max-iters", "300"]);
        assert!(code == 0 || code == 5, "exit {code}");
        (code, fs::read(&out).unwrap(), fs::read(sibling(&out, ".log.csv")).unwrap())
    };
    let (a, b) = (run("a.json"), run("b.json"));
    assert_eq!(a, b);
    let curves = fs::read_to_string(dir.path().join("a.curves.csv")).unwrap();
    assert!(curves.starts_with("region_id,time_min,observed,fitted"));
    assert_eq!(curves.lines().count(), 1 + 3 * 12);

    assert_eq!(ttcm(&["fit", "--tacs", s(&tacs), "--p", "2", "--out", s(&dir.path().join("v.json")), "--vb", "0.05"]), 2);
}

#[test]
fn fit_with_warm_start_and_scale_resolution() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "small.json", SMALL);
    let tacs = dir.path().join("tacs.csv");
    let code = ttcm(&[
        "simulate", "--config", s(&cfg), "--grid", "log:0.25,60,16", "--out", s(&tacs), "--attenuation", "0.6,-0.05,-0.8",
    ]);
    assert_eq!(code, 0);
    let out = dir.path().join("fit.json");
    let code = ttcm(&[
        "fit", "--tacs", s(&tacs), "--p", "2", "--out", s(&out), "--starts", "0", "--warm-start", s(&cfg), "--resolve-scale",
    ]);
    assert_eq!(code, 0);
    let fit: serde_json::Value = serde_json::from_slice(&fs::read(&out).unwrap()).unwrap();
    assert_eq!(fit["converged"], true);
    let scale: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("fit.scale.json")).unwrap()).unwrap();
    assert!((scale["zeta"].as_f64().unwrap() - 1.0).abs() <= 1e-6);
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    path.with_file_name(format!("{}{suffix}", path.file_stem().unwrap().to_str().unwrap()))
}

#[test]
fn check_exit_codes() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("check.json");
    assert_eq!(ttcm(&["check", "--config", s(&demo_config()), "--out", s(&out)]), 0);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(&out).unwrap()).unwrap();
    assert_eq!(report["assumption_a"]["satisfied"], true);
    assert_eq!(report["region_richness"]["satisfied"], true);

    let two = write(&dir, "two.json", r#"{"regions": [
        {"id": "a", "K1": 0.3, "k2": 0.2, "k3": 0.1, "k4": 0.05},
        {"id": "b", "K1": 0.5, "k2": 0.4, "k3": 0.05, "k4": 0.02}],
        "input": {"terms": [{"lambda": 1.0, "mu": -0.1}]}}"#);
    assert_eq!(ttcm(&["check", "--config", s(&two), "--out", s(&out)]), 1);

    let dup = write(&dir, "dup.json", r#"{"regions": [
        {"id": "a", "K1": 0.3, "k2": 0.2, "k3": 0.1, "k4": 0.05},
        {"id": "a", "K1": 0.5, "k2": 0.4, "k3": 0.05, "k4": 0.02}],
        "input": {"terms": [{"lambda": 1.0, "mu": -0.1}]}}"#);
    assert_eq!(ttcm(&["check", "--config", s(&dup), "--out", s(&out)]), 2);
}

fn deviations(path: &Path) -> Vec<f64> {
    let mut r = csv::Reader::from_path(path).unwrap();
    assert_eq!(r.headers().unwrap(), vec!["region_id", "max_rel_dev"]);
    r.records().map(|rec| rec.unwrap()[1].parse().unwrap()).collect()
}

#[test]
fn oracle_compare() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("dev.csv");
    assert_eq!(ttcm(&["oracle-compare", "--config", s(&demo_config()), "--grid", "log:0.25,60,16", "--out", s(&out)]), 0);
    let fine = deviations(&out);
    assert_eq!(fine.len(), 7);
    assert!(fine.iter().all(|&d| d <= 1e-6));

    let code = ttcm(&[
        "oracle-compare", "--config", s(&demo_config()), "--grid", "log:0.25,60,16", "--out", s(&out), "--step", "0.5",
    ]);
    assert_eq!(code, 1);
    let coarse = deviations(&out);
    assert!(coarse.iter().zip(&fine).all(|(c, f)| c > f));

    let silent = write(&dir, "silent.json", r#"{"regions": [{"id": "a", "K1": 0.0, "k2": 0.2, "k3": 0.1, "k4": 0.05}],
        "input": {"terms": [{"lambda": 1.0, "mu": -0.1}]}}"#);
    assert_eq!(ttcm(&["oracle-compare", "--config", s(&silent), "--grid", "lin:1,10,10", "--out", s(&out)]), 0);
    assert_eq!(deviations(&out), vec![0.0]);
}

#[test]
fn verify_exit_codes() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("verify.json");
    assert_eq!(ttcm(&["verify", "--config", s(&demo_config()), "--grid", "log:0.25,60,8", "--out", s(&out)]), 4);

    let cfg = write(&dir, "five.json", r#"{"regions": [
        {"id": "r0", "K1": 0.20, "k2": 0.130, "k3": 0.06, "k4": 0.04},
        {"id": "r1", "K1": 0.25, "k2": 0.201, "k3": 0.12, "k4": 0.08},
        {"id": "r2", "K1": 0.30, "k2": 0.272, "k3": 0.18, "k4": 0.12},
        {"id": "r3", "K1": 0.35, "k2": 0.343, "k3": 0.24, "k4": 0.16},
        {"id": "r4", "K1": 0.40, "k2": 0.414, "k3": 0.30, "k4": 0.20}],
        "input": {"terms": [{"lambda": 1.0, "mu": -0.1}, {"lambda": 3.0, "mu": -1.2}]}}"#);
    let code = ttcm(&["verify", "--config", s(&cfg), "--grid", "log:0.25,60,16", "--out", s(&out), "--starts", "2", "--bins", "5"]);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(&out).unwrap()).unwrap();
    let expected = if report["passed"] == true { 0 } else if report["n_converged"] == 0 { 5 } else { 1 };
    assert_eq!(code, expected);
    let bins = fs::read_to_string(dir.path().join("verify.zeta.csv")).unwrap();
    assert!(bins.starts_with("bin_lo,bin_hi,count"));
}
