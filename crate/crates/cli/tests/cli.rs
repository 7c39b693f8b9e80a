use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn fcurve(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fcurve")).args(args).output().unwrap()
}

fn synth(dir: &Path) -> String {
    let out = fcurve(&[
        "synth",
        "--out",
        dir.to_str().unwrap(),
        "--users",
        "10",
        "--words",
        "20",
        "--events-per-pair",
        "2",
        "--ground-truth",
        "c_hlr_plus",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dir.join("run.toml").to_str().unwrap().to_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr_lines(out: &Output) -> usize {
    String::from_utf8_lossy(&out.stderr).lines().count()
}

#[test]
fn synth_writes_dataset_and_configs() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    for f in ["reviews.csv", "complexity.tsv", "concreteness.csv", "subtlex.csv", "ground_truth.json", "run.toml", "synth.toml"] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    let text = std::fs::read_to_string(dir.path().join("reviews.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 10 * 20 * 2);
}

#[test]
fn train_writes_artifacts_and_flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path());
    let out_dir = dir.path().join("run");
    let out = fcurve(&[
        "train", "--config", &cfg, "--model", "hlr_lex", "--epochs", "3", "--lr", "0.01", "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let model = json(&out_dir.join("model.json"));
    assert_eq!(model["kind"], "hlr_lex");
    assert_eq!(model["hyperparameters"]["epochs"], 3);
    assert_eq!(model["hyperparameters"]["learning_rate"], 0.01);
    let log = std::fs::read_to_string(out_dir.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
    let summary = json(&out_dir.join("train_summary.json"));
    assert_eq!(summary["train_events"], 360);
    assert_eq!(summary["test_events"], 40);
    let eval = json(&out_dir.join("eval.json"));
    assert_eq!(eval["num_events"], 40);

    let inspect = fcurve(&["inspect", out_dir.join("model.json").to_str().unwrap(), "--top-k", "3"]);
    assert!(inspect.status.success());
    assert_eq!(String::from_utf8_lossy(&inspect.stdout).lines().count(), 4);

    let evaluated = dir.path().join("eval");
    let out = fcurve(&[
        "evaluate", "--config", &cfg, "--model-file", out_dir.join("model.json").to_str().unwrap(), "--out",
        evaluated.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(&evaluated.join("eval.json"))["mae"], eval["mae"]);
}

#[test]
fn ladder_writes_json_and_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path());
    let out_dir = dir.path().join("ladder");
    let out = fcurve(&[
        "ladder", "--config", &cfg, "--kinds", "pimsleur,leitner,hlr,n_hlr_plus", "--epochs", "2", "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&out_dir.join("ladder.json"));
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r["status"] == "ok"));
    let table = std::fs::read_to_string(out_dir.join("ladder.txt")).unwrap();
    assert!(table.contains("N-HLR+"));
    assert_eq!(String::from_utf8_lossy(&out.stdout), table);
}

#[test]
fn missing_dataset_exits_two_with_one_line() {
    let out = fcurve(&["train", "--dataset", "/definitely/not/here.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_lines(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("/definitely/not/here.csv"));
}

#[test]
fn bad_arguments_exit_two_with_one_line() {
    for args in [&["train", "--model", "hlr++"][..], &["train", "--epochs", "many"], &["frobnicate"]] {
        let out = fcurve(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert_eq!(stderr_lines(&out), 1, "{args:?}");
    }
}

#[test]
fn malformed_inputs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad_csv = dir.path().join("bad.csv");
    std::fs::write(&bad_csv, "a,b,c\n1,2,3\n").unwrap();
    let out = fcurve(&["ingest", "--dataset", bad_csv.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown column `a`"));

    let bad_model = dir.path().join("model.json");
    std::fs::write(&bad_model, "{\"kind\": \"hlr\"}").unwrap();
    let out = fcurve(&["inspect", bad_model.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_lines(&out), 1);

    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "datset = \"x.csv\"\n").unwrap();
    let out = fcurve(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ingest_reports_counts() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let out = fcurve(&["ingest", "--dataset", dir.path().join("reviews.csv").to_str().unwrap(), "--limit", "50"]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["stats"]["rows_kept"], 50);
}
