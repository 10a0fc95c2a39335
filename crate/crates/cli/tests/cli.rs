use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_systolic"));
    for (k, _) in std::env::vars() {
        if k.starts_with("SYSTOLIC_") {
            c.env_remove(k);
        }
    }
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout_json(o: &Output) -> Value {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

fn error_record(o: &Output) -> Value {
    assert!(!o.status.success());
    let line = String::from_utf8_lossy(&o.stderr);
    serde_json::from_str(line.trim()).unwrap_or_else(|e| panic!("not a JSON record ({e}): {line}"))
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

// One 64x64x64 matmul: a 2x2 tiling of X and of W on 32x32 arrays.
const TOY: &str = r#"{"name":"toy","layers":[{"id":"mm","kind":"dense","in_features":64,"out_features":64,"seq":64}]}"#;

fn models_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

#[test]
fn schedule_toy_model() {
    let dir = tempfile::tempdir().unwrap();
    let model = write(dir.path(), "toy.json", TOY);
    let out = dir.path().join("out");
    let v = stdout_json(&run(&["schedule", "--model", model.to_str().unwrap(), "--pods", "4", "--out", out.to_str().unwrap()]));
    assert_eq!(v["tile_ops"], 8);
    assert_eq!(v["violations"], 0);
    assert!(v["slices"].as_u64().unwrap() <= 4);
    assert!(out.join("schedule.json").exists());
}

#[test]
fn simulate_empty_model_is_all_zero() {
    let dir = tempfile::tempdir().unwrap();
    let model = write(dir.path(), "empty.json", r#"{"name":"empty","layers":[]}"#);
    let v = stdout_json(&run(&["simulate", "--model", model.to_str().unwrap(), "--pods", "2"]));
    let stats = v["stats"].as_object().unwrap();
    assert_eq!(stats["makespan_cycles"], 0);
    assert_eq!(stats["tile_ops"], 0);
    assert_eq!(stats["utilization"], 0.0);
}

#[test]
fn every_shipped_model_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mut files: Vec<PathBuf> = std::fs::read_dir(models_dir()).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    assert!(files.len() >= 70);
    for f in files {
        let out = dir.path().join(f.file_stem().unwrap());
        let (m, o) = (f.to_str().unwrap(), out.to_str().unwrap());
        let common = ["--model", m, "--rows", "128", "--cols", "128", "--pods", "8"];
        let s = run(&[&["schedule"][..], &common, &["--out", o]].concat());
        assert_eq!(stdout_json(&s)["violations"], 0, "{m}");
        let sched = out.join("schedule.json");
        let sim = run(&[&["simulate"][..], &common, &["--schedule", sched.to_str().unwrap()]].concat());
        assert!(stdout_json(&sim)["stats"]["tile_ops"].as_u64().unwrap() > 0, "{m}");
    }
}

#[test]
fn pods_and_tdp_are_exclusive_and_required() {
    let m = models_dir().join("bert_mini_10.json");
    let m = m.to_str().unwrap();
    assert_eq!(error_record(&run(&["schedule", "--model", m, "--pods", "4", "--tdp", "400"]))["error"]["kind"], "usage");
    assert_eq!(error_record(&run(&["schedule", "--model", m]))["error"]["kind"], "usage");
    let v = stdout_json(&run(&["schedule", "--model", m, "--tdp", "400", "--rows", "64", "--cols", "64"]));
    assert_eq!(v["pods"], 128);
}

#[test]
fn unknown_flags_are_hard_errors() {
    let o = run(&["simulate", "--pods", "4", "--frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_record(&o)["error"]["kind"], "usage");
}

#[test]
fn failures_emit_machine_readable_records() {
    let o = run(&["simulate", "--model", "/nonexistent/model.json", "--pods", "4"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_record(&o)["error"]["kind"], "io");
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.json", "{not json");
    assert_eq!(error_record(&run(&["schedule", "--model", bad.to_str().unwrap(), "--pods", "4"]))["error"]["kind"], "parse");
    let toy = write(dir.path(), "toy.json", TOY);
    let o = run(&["schedule", "--model", toy.to_str().unwrap(), "--pods", "3"]);
    assert_eq!(error_record(&o)["error"]["kind"], "config");
}

#[test]
fn help_lists_every_flag() {
    for (cmd, flags) in [
        ("schedule", &["--model", "--rows", "--cols", "--pods", "--tdp", "--topology", "--expansion", "--bank-size", "--kpart", "--params", "--out"][..]),
        ("simulate", &["--model", "--pods", "--tdp", "--schedule", "--bank-size", "--params"][..]),
        ("dse", &["--preset", "--full", "--tdp", "--out"][..]),
        ("ict-bench", &["--ports", "--trials", "--seed", "--out"][..]),
    ] {
        let o = run(&[cmd, "--help"]);
        assert!(o.status.success());
        let text = String::from_utf8_lossy(&o.stdout);
        for f in flags {
            assert!(text.contains(f), "{cmd} --help lacks {f}");
        }
    }
}

#[test]
fn environment_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let toy = write(dir.path(), "toy.json", TOY);
    let o = bin()
        .args(["schedule", "--model", toy.to_str().unwrap()])
        .env("SYSTOLIC_PODS", "2")
        .output()
        .unwrap();
    assert_eq!(stdout_json(&o)["pods"], 2);
}

#[test]
fn energy_parameter_file_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let toy = write(dir.path(), "toy.json", TOY);
    let params = write(dir.path(), "p.json", r#"{"tdp_w": 200.0}"#);
    let v = stdout_json(&run(&["simulate", "--model", toy.to_str().unwrap(), "--pods", "4", "--params", params.to_str().unwrap()]));
    assert_eq!(v["power"]["tdp_w"], 200.0);
}

#[test]
fn granularity_preset_writes_six_rows() {
    let dir = tempfile::tempdir().unwrap();
    let toy = write(dir.path(), "toy.json", TOY);
    let out = dir.path().join("dse");
    let o = run(&["dse", "--preset", "granularity", "--model", toy.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.join("granularity.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 7);
    assert!(lines[0].starts_with("rows,cols,pods"));
    assert!(lines[6].starts_with("512,512,1,"));
}

#[test]
fn ict_bench_is_deterministic_per_seed() {
    let a = run(&["ict-bench", "--ports", "8", "--trials", "300", "--seed", "5"]);
    let b = run(&["ict-bench", "--ports", "8", "--trials", "300", "--seed", "5"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8_lossy(&a.stdout);
    let crossbar = text.lines().find(|l| l.starts_with("crossbar")).unwrap();
    assert!(crossbar.contains(",1.0,"), "{crossbar}");
}
