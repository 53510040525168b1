use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn r2se(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_r2se")).args(args).output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

const SMALL: &str = r#"{"data": {"train_clips": 40, "test_clips": 10}, "model": {"hidden": [16], "vocab_size": 8}, "adapters": {"rank": 4}}"#;

#[test]
fn gen_data_writes_clips_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("run");
    let o = r2se(&["gen-data", "--config", &cfg, "--seed", "3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let log: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let total: u64 = log["train"].as_object().unwrap().values().map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(total, 40);
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);
    assert!(manifest["artifacts"]["train_clips.jsonl"].is_string());
}

#[test]
fn seed_override_conflicts_with_existing_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("run");
    let out = out.to_str().unwrap();
    assert!(r2se(&["gen-data", "--config", &cfg, "--out", out]).status.success());
    let o = r2se(&["gen-data", "--config", &cfg, "--seed", "99", "--out", out]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("integrity"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"data": {"train_clip": 10}}"#);
    let o = r2se(&["gen-data", "--config", &cfg, "--out", dir.path().join("run").to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("train_clip"));
}

#[test]
fn later_stage_without_inputs_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let o = r2se(&["allocate", "--config", &cfg, "--out", dir.path().join("run").to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(!String::from_utf8_lossy(&o.stderr).contains("panicked"));
}
