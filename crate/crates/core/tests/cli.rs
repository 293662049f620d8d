use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splitclass"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SPEC: &str = r#"{
  "classes": [
    {"name": "a", "modes": 2, "samples_per_mode": 15, "separation": 8},
    {"name": "b", "modes": 1, "samples_per_mode": 20, "separation": 8}
  ],
  "dim": 4, "sigma": 1.0, "class_spread": 10.0, "seed": 3
}"#;

fn write_spec(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("spec.json");
    fs::write(&p, text).unwrap();
    p
}

fn config(dir: &Path, modes: &[&str], data: &str) -> std::path::PathBuf {
    let modes: Vec<String> = modes.iter().map(|m| format!("\"{m}\"")).collect();
    let text = format!(
        r#"{{"modes": [{}], "dataset": {{"csv": "{data}"}},
            "training": {{"epochs": 3, "batch_size": 8, "learning_rate": 0.01, "folds": 2,
                          "encoder": {{"hidden": [8], "embed_dim": 4, "normalize": false}}}}}}"#,
        modes.join(", ")
    );
    let p = dir.join("config.json");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn generate_writes_rows_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), SPEC);
    let (o1, o2) = (dir.path().join("one"), dir.path().join("two"));
    for o in [&o1, &o2] {
        let out = bin(&["generate", "--spec", s(&spec), "--out", s(o)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let csv = fs::read(o1.join("data.csv")).unwrap();
    assert_eq!(csv, fs::read(o2.join("data.csv")).unwrap());
    // header plus 2·15 + 20 rows
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 51);
    let truth: Value = serde_json::from_slice(&fs::read(o1.join("ground_truth.json")).unwrap()).unwrap();
    assert_eq!(truth["mode_ids"].as_array().unwrap().len(), 50);
    assert_eq!(truth["class_names"], serde_json::json!(["a", "b"]));
}

#[test]
fn generate_rejects_bad_separation() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), &SPEC.replace("\"separation\": 8}\n  ]", "\"separation\": -1}\n  ]"));
    let out = bin(&["generate", "--spec", s(&spec), "--out", s(&dir.path().join("o"))]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("classes[1].separation"), "{err}");
}

#[test]
fn train_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), SPEC);
    assert!(bin(&["generate", "--spec", s(&spec), "--out", s(dir.path())]).status.success());
    let cfg = config(dir.path(), &["standard", "clustering_triplet"], "data.csv");
    let run = dir.path().join("run");
    let out = bin(&["train", "--config", s(&cfg), "--out", s(&run)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.starts_with("rank"), "{stdout}");

    let report: Value = serde_json::from_slice(&fs::read(run.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["schema_version"], 1);
    for r in report["results"].as_array().unwrap() {
        for key in ["accuracy", "recall", "precision", "f_score", "var_fn", "var_fp"] {
            assert!(r["aggregate"][key].is_f64(), "{key}");
        }
        let trace = &r["runs"][0]["folds"][0]["controller_trace"];
        if r["mode"] == "clustering_triplet" {
            assert_eq!(trace.as_array().unwrap().len(), 2);
            assert!(!trace[0]["sequence"].as_array().unwrap().is_empty());
        }
    }
    let summary = fs::read_to_string(run.join("summary.csv")).unwrap();
    assert!(summary.starts_with("rank,mode,accuracy,recall,precision,f_score,var_fn,var_fp"));

    let ck = run.join("checkpoints").join("clustering_triplet_r0_f0.json");
    assert!(ck.exists());
    let eval_dir = dir.path().join("eval");
    let out = bin(&["evaluate", "--checkpoint", s(&ck), "--data", s(&dir.path().join("data.csv")), "--out", s(&eval_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("f_score"));
    let eval: Value = serde_json::from_slice(&fs::read(eval_dir.join("evaluation.json")).unwrap()).unwrap();
    let acc = eval["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert!(fs::read_to_string(eval_dir.join("confusion.csv")).unwrap().starts_with("true\\pred,a,b"));
}

#[test]
fn missing_dataset_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &["standard"], "nowhere/features.csv");
    let out = bin(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("run"))]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nowhere/features.csv"), "{err}");
}

#[test]
fn compare_needs_two_modes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &["standard"], "data.csv");
    let out = bin(&["compare", "--config", s(&cfg), "--out", s(&dir.path().join("run"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("two modes"));
}
