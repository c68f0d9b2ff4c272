use std::path::Path;
use std::process::{Command, Output};

use rml_lab::cli::{emit_curves, ExperimentConfig, Manifest};

const BIN: &str = env!("CARGO_BIN_EXE_rml-lab");

fn lab(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env("RML_LOG", "error").output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_tiny_config(dir: &Path) -> std::path::PathBuf {
    let cfg = serde_json::json!({
        "baseline_iterations": 10,
        "iterations": 4,
        "stages": 2,
        "eval_interval": 2,
        "batch_size": 2,
        "unlabeled_batch": 2,
        "feature_dim": 4,
        "num_train": 8,
        "num_eval": 4,
        "labeled_fraction": 0.25,
        "data_dir": dir.join("data"),
        "shapes": { "height": 8, "width": 8, "num_classes": 3 }
    });
    let path = dir.join("tiny.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn read_tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = rml_lab::cli::hash_tree(root)
        .unwrap()
        .into_keys()
        .map(|k| {
            let bytes = std::fs::read(root.join(&k)).unwrap();
            (k, bytes)
        })
        .collect();
    out.sort();
    out
}

#[test]
fn validate_prints_a_fixpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let first = lab(&["validate", "--config", cfg.to_str().unwrap()]);
    assert!(first.status.success(), "{}", stderr(&first));
    let dumped = dir.path().join("resolved.json");
    std::fs::write(&dumped, &first.stdout).unwrap();
    let second = lab(&["validate", "--config", dumped.to_str().unwrap()]);
    assert_eq!(first.stdout, second.stdout);
    let text = String::from_utf8(first.stdout).unwrap();
    let parsed = ExperimentConfig::from_json(&text).unwrap();
    assert_eq!(parsed.train.tau, 0.0);
    assert_eq!(parsed.train.alpha, 0.99);
}

#[test]
fn config_errors_are_one_categorized_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\n  \"seed\": 1,\n  \"alpha\": 2.0\n}\n").unwrap();
    let o = lab(&["validate", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: config: field `alpha` (line 3)"), "{err}");
}

#[test]
fn usage_errors_exit_with_two() {
    let o = lab(&["train", "--seed", "abc"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error: usage:"));
    assert_eq!(lab(&["--help"]).status.code(), Some(0));
}

#[test]
fn training_without_data_reports_the_missing_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let out = dir.path().join("run");
    let o = lab(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.starts_with("error: dataset-not-found:"), "{err}");
    assert_eq!(err.lines().count(), 1);
}

#[test]
fn gen_data_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let mut trees = Vec::new();
    for (name, seed) in [("a", "3"), ("b", "3"), ("c", "4")] {
        let out = dir.path().join(name);
        let data = out.join("data");
        let o = lab(&[
            "gen-data",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            seed,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        // The config pins data_dir; move the output aside for comparison.
        std::fs::rename(dir.path().join("data"), &data).unwrap();
        trees.push(read_tree(&data));
        let m = Manifest::read(&out.join("gen-data.manifest.json")).unwrap();
        assert_eq!(m.artifacts.len(), trees.last().unwrap().len());
    }
    assert_eq!(trees[0], trees[1]);
    assert_ne!(trees[0], trees[2]);
}

#[test]
fn manifest_rerun_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let first = dir.path().join("first");
    let c = cfg.to_str().unwrap();
    assert!(lab(&["gen-data", "--config", c, "--out", first.to_str().unwrap()]).status.success());
    let o = lab(&["train", "--config", c, "--out", first.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest_path = first.join("train.manifest.json");
    let manifest = Manifest::read(&manifest_path).unwrap();
    assert!(manifest.artifacts.contains_key("metrics.jsonl"));
    assert!(manifest.artifacts.contains_key("stage2_learner1.ckpt"));

    let second = dir.path().join("second");
    let o = lab(&["train", "--config", manifest_path.to_str().unwrap(), "--out", second.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let again = Manifest::read(&second.join("train.manifest.json")).unwrap();
    assert_eq!(again.artifacts, manifest.artifacts);
    assert_eq!(read_tree(&first.join("run")), read_tree(&second.join("run")));
}

#[test]
fn a_locked_output_directory_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let out = dir.path().join("out");
    std::fs::create_dir_all(&out).unwrap();
    std::fs::write(out.join(".lock"), b"").unwrap();
    let o = lab(&["gen-data", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: locked:"));
    std::fs::remove_file(out.join(".lock")).unwrap();
    assert!(lab(&["gen-data", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]).status.success());
    assert!(!out.join(".lock").exists());
}

#[test]
fn unknown_presets_are_config_errors() {
    let o = lab(&["preset", "fig3"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: config: field `preset`"), "{}", stderr(&o));
}

fn record(iteration: usize, loss: f64) -> String {
    let scores = serde_json::json!({ "miou": 0.5, "pixel_accuracy": 0.9, "iou": [0.5, null] });
    serde_json::json!({
        "iteration": iteration,
        "stage": 1,
        "labeled_loss": [loss, loss],
        "unlabeled_loss": [0.1, 0.2],
        "student": [scores, scores],
        "teacher": [scores, scores],
        "tv_divergence": 0.01,
        "pseudo_accuracy": [0.8, null],
        "fallbacks": 0
    })
    .to_string()
}

#[test]
fn curves_from_an_empty_directory() {
    let dir = tempfile::tempdir().unwrap();
    let s = emit_curves(dir.path()).unwrap();
    assert!(s.files.is_empty());
    assert_eq!(s.warnings(), 0);
}

#[test]
fn curves_are_sorted_and_last_writer_wins() {
    let dir = tempfile::tempdir().unwrap();
    let lines = [record(20, 2.0), record(10, 1.0), "{not json".to_string(), record(20, 3.0), String::new()];
    std::fs::write(dir.path().join("run.jsonl"), lines.join("\n")).unwrap();
    let s = emit_curves(dir.path()).unwrap();
    assert_eq!(s.malformed, 1);
    assert_eq!(s.duplicates, 1);
    assert_eq!(s.warnings(), 2);
    assert_eq!(s.files.len(), 11);
    let loss = std::fs::read_to_string(dir.path().join("curves/run.labeled_loss_1.csv")).unwrap();
    assert_eq!(loss, "iteration,value\n10,1\n20,3\n");
    let pacc = std::fs::read_to_string(dir.path().join("curves/run.pseudo_accuracy_2.csv")).unwrap();
    assert_eq!(pacc, "iteration,value\n");
}

#[test]
fn emit_curves_command_reports_warnings() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("a.jsonl"), format!("{}\ngarbage\n", record(1, 0.5))).unwrap();
    let o = lab(&["emit-curves", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("11 curve files; 1 warnings"), "{text}");
}
