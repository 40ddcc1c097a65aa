//! End-to-end runs of the binary on a small configuration.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"{"seed": 3, "data": {"num_pos": 8, "num_neg": 8}, "train": {"epochs": 2, "warmup_epochs": 1},
    "eval": {"seen_episodes": 3, "unseen_episodes": 3, "proposals": 10}}"#;

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_viewfuse"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.json");
    fs::write(&path, SMALL).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn missing_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["eval"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_config_fails_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, r#"{"no_such_key": 1}"#).unwrap();
    let out = run(&["gen-data", "--config", path.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    let out = run(&["gen-data", "--config", "does_not_exist.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn eval_without_checkpoints_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = run(&["eval", "--config", &cfg, "--out", "empty"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

fn png_size(path: &Path) -> (u32, u32) {
    let decoder = png::Decoder::new(std::io::BufReader::new(fs::File::open(path).unwrap()));
    let reader = decoder.read_info().unwrap();
    let info = reader.info();
    (info.width, info.height)
}

#[test]
fn small_pipeline_produces_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    for stage in ["gen-data", "train", "eval", "ablate"] {
        let out = run(&[stage, "--config", &cfg, "--out", "out"], dir.path());
        assert!(
            out.status.success(),
            "{stage}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let out = run(
        &["viz", "--config", &cfg, "--out", "out", "--episodes", "1"],
        dir.path(),
    );
    assert!(out.status.success(), "viz: {}", String::from_utf8_lossy(&out.stderr));
    let o = dir.path().join("out");
    for name in [
        "data_push.jsonl",
        "data_pull.jsonl",
        "model_push.ckpt",
        "model_pull.ckpt",
        "report.json",
        "ablation.json",
        "episodes_push_model.jsonl",
        "trajectories/push_seen_000.jsonl",
    ] {
        assert!(o.join(name).is_file(), "missing {name}");
    }
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(o.join("report.json")).unwrap()).unwrap();
    let rows = report["reports"].as_array().unwrap();
    assert_eq!(rows.len(), 6);
    for row in rows {
        let rate = row["short_term"].as_f64().unwrap();
        assert!((0.0..=100.0).contains(&rate));
    }
    let pngs: Vec<_> = fs::read_dir(o.join("viz"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    assert!(pngs.len() >= 6, "{} images", pngs.len());
    for p in pngs {
        assert_eq!(png_size(&p), (64, 64), "{}", p.display());
    }
}
