//! Exit codes of the `sb` binary: 0 ok, 2 config, 3 divergence, 4 I/O.

use std::path::Path;
use std::process::Command;

fn sb(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_sb")).args(args).output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    (out.status.code().unwrap(), text)
}

fn gen(dir: &Path) -> String {
    let stem = dir.join("lms").to_string_lossy().into_owned();
    let (code, _) = sb(&["gen", "--preset", "lms-5", "--d", "6", "--n", "200", "--out", &stem]);
    assert_eq!(code, 0);
    stem
}

#[test]
fn generate_train_and_evaluate_succeed() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path());
    let model = dir.path().join("m").to_string_lossy().into_owned();
    let (code, out) = sb(&[
        "train", "--data", &data, "--arch", "8x1", "--epochs", "3", "--batch-size", "32", "--out", &model,
    ]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["epochs"], 3);
    let (code, out) = sb(&["eval", "--model", &model, "--data", &data]);
    assert_eq!(code, 0);
    assert!(serde_json::from_str::<serde_json::Value>(&out).is_ok());
}

#[test]
fn bad_configuration_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x").to_string_lossy().into_owned();
    assert_eq!(sb(&["gen", "--preset", "nope", "--n", "10", "--out", &out]).0, 2);
    let data = gen(dir.path());
    assert_eq!(sb(&["train", "--data", &data, "--arch", "0x1", "--out", &out]).0, 2);
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"experiment":"uap","bogus":1}"#).unwrap();
    assert_eq!(sb(&["run", "--config", cfg.to_str().unwrap(), "--print-config"]).0, 2);
}

#[test]
fn divergent_training_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path());
    let out = dir.path().join("m").to_string_lossy().into_owned();
    let (code, _) = sb(&[
        "train", "--data", &data, "--arch", "8x2", "--optimizer", "sgd:1e12", "--loss", "hinge",
        "--epochs", "20", "--batch-size", "8", "--out", &out,
    ]);
    assert_eq!(code, 3);
}

#[test]
fn missing_or_corrupt_files_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m").to_string_lossy().into_owned();
    let missing = dir.path().join("absent").to_string_lossy().into_owned();
    assert_eq!(sb(&["train", "--data", &missing, "--out", &out]).0, 4);
    let data = gen(dir.path());
    let bin = format!("{data}.bin");
    let bytes = std::fs::read(&bin).unwrap();
    std::fs::write(&bin, &bytes[..bytes.len() / 2]).unwrap();
    assert_eq!(sb(&["train", "--data", &data, "--out", &out]).0, 4);
}
