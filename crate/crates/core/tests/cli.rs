mod common;

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn selcredit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_selcredit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = selcredit(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    selcredit(args).status.code().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn stage_by_stage_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| dir.path().join(name);

    let stdout = ok(&["synth", "--scenario", "bump", "--n", "3000", "--seed", "4", "--out", s(&d("all.json")), "--probabilities", s(&d("p.csv"))]);
    assert!(stdout.contains("3000 samples"));
    assert_eq!(std::fs::read_to_string(d("p.csv")).unwrap().lines().count(), 3001);

    ok(&["split", "--data", s(&d("all.json")), "--fraction", "0.75", "--seed", "0", "--train-out", s(&d("train.json")), "--test-out", s(&d("test.json"))]);
    assert_eq!(json(&d("train.json"))["labels"].as_array().unwrap().len(), 2250);

    for role in ["lr", "nn"] {
        let out = format!("{role}.json");
        ok(&["train", "--model", role, "--data", s(&d("train.json")), "--epochs", "60", "--seed", "1", "--out", s(&d(&out)), "--trace", s(&d("trace.csv"))]);
    }
    assert_eq!(json(&d("nn.json"))["model"]["hidden_units"], 2);
    assert!(std::fs::read_to_string(d("trace.csv")).unwrap().lines().count() > 1);

    ok(&["selective", "--lr", s(&d("lr.json")), "--nn", s(&d("nn.json")), "--data", s(&d("train.json")), "--out", s(&d("z.json"))]);
    let z = json(&d("z.json"));
    assert_eq!(z["variant"], "practical");
    assert_eq!(z["z"].as_array().unwrap().len(), 2250);

    ok(&["train", "--model", "diffnet", "--data", s(&d("train.json")), "--labels", s(&d("z.json")), "--epochs", "60", "--out", s(&d("g.json"))]);
    assert_eq!(json(&d("g.json"))["model"]["hidden_units"], 5);

    ok(&["evaluate", "--model", s(&d("nn.json")), "--reject", s(&d("g.json")), "--data", s(&d("test.json")), "--report", s(&d("eval.json")), "--roc", s(&d("roc.csv"))]);
    let e = json(&d("eval.json"));
    assert_eq!(e["schema"], "selective-credit/evaluate/v1");
    let err = e["overall"]["classification_error"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&err));
    assert!(e["rejection"]["rejection_rate"].as_f64().is_some());
    assert!(std::fs::read_to_string(d("roc.csv")).unwrap().lines().count() > 2);

    ok(&["explain", "--model", s(&d("nn.json")), "--data", s(&d("test.json")), "--global", "--out", s(&d("gi.json"))]);
    let total: f64 = json(&d("gi.json"))["lambdas"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
    assert!((total - 100.0).abs() < 1e-9);

    ok(&["explain", "--model", s(&d("lr.json")), "--data", s(&d("test.json")), "--local-sample", "3", "--out", s(&d("local.json"))]);
    assert!(json(&d("local.json")).is_object());

    ok(&["explain", "--model", s(&d("g.json")), "--data", s(&d("test.json")), "--patterns", "--lr", s(&d("lr.json")), "--nn", s(&d("nn.json")), "--out", s(&d("pat.json"))]);
    assert!(json(&d("pat.json"))["rejected_count"].as_u64().is_some());
}

#[test]
fn ingest_taiwan_format() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("t.csv");
    common::write(&csv, &common::taiwan_like_csv(200, 1));
    let out = dir.path().join("t.json");
    let stdout = ok(&["ingest", "--dataset", "taiwan", "--input", s(&csv), "--out", s(&out)]);
    assert!(stdout.starts_with("200 samples, 23 features"), "{stdout}");
}

#[test]
fn bounds_evaluation_and_inversion() {
    let stdout = ok(&["bounds", "--n", "1000", "--epsilon", "0.05"]);
    let rows: Value = serde_json::from_str(stdout.lines().last().unwrap()).unwrap();
    let b = rows[0]["bound"].as_f64().unwrap();
    assert!((b - 2.0 * (-5.0f64).exp()).abs() < 1e-12);

    let stdout = ok(&["bounds", "--n", "10", "--epsilon", "0.01"]);
    assert!(stdout.contains("(vacuous)"));

    let stdout = ok(&["bounds", "--n", "1000", "--delta", "0.05"]);
    let rows: Value = serde_json::from_str(stdout.lines().last().unwrap()).unwrap();
    let eps = rows[0]["epsilon_1"].as_f64().unwrap();
    assert!((eps - ((2.0f64 / 0.05).ln() / 2000.0).sqrt()).abs() < 1e-12);

    ok(&["bounds", "--n", "1000", "--n-test", "500", "--epsilon", "0.05", "0.05"]);
}

#[test]
fn synthetic_pipeline_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    let out = dir.path().join("out");
    let config = serde_json::json!({
        "dataset": "synthetic",
        "scenario": "linear",
        "synthetic_n": 2000,
        "mc_samples": 5000,
        "lr": {"max_epochs": 50},
        "nn": {"max_epochs": 50},
        "diffnet": {"max_epochs": 50},
        "formats": ["json", "csv"]
    });
    std::fs::write(&cfg, config.to_string()).unwrap();
    let stdout = ok(&["pipeline", "--config", s(&cfg), "--output-dir", s(&out)]);
    assert!(stdout.contains("rejection rate"));
    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["complete"], true);
    let report = json(&out.join("report.json"));
    assert!(report["schema"].as_str().unwrap().starts_with("selective-credit/"));
    assert!(!out.join("roc.svg").exists());
}

#[test]
fn exit_codes_name_the_failing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");

    // argument errors come from the parser
    assert_eq!(code(&["bounds", "--n", "10"]), 2);
    assert_eq!(code(&["no-such-command"]), 2);

    assert_eq!(code(&["bounds", "--n", "10", "--epsilon", "0"]), 8);
    assert_eq!(code(&["bounds", "--n", "10", "--delta", "1.5"]), 8);
    assert_eq!(code(&["split", "--data", s(&missing), "--train-out", "a", "--test-out", "b"]), 3);
    assert_eq!(code(&["synth", "--scenario", "nope", "--n", "10", "--out", s(&dir.path().join("x.json"))]), 2);

    let data = dir.path().join("d.json");
    ok(&["synth", "--scenario", "linear", "--n", "100", "--out", s(&data)]);
    assert_eq!(code(&["train", "--model", "diffnet", "--data", s(&data), "--out", s(&dir.path().join("m.json"))]), 2);
    assert_eq!(code(&["split", "--data", s(&data), "--fraction", "1.5", "--train-out", "a", "--test-out", "b"]), 2);

    let bad_csv = dir.path().join("bad.csv");
    common::write(&bad_csv, "ID,LIMIT_BAL\n1,abc\n");
    let out = selcredit(&["ingest", "--dataset", "taiwan", "--input", s(&bad_csv), "--out", s(&dir.path().join("o.json"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage: ingest"));

    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"dataset": "taiwan", "unknown_key": 1}"#).unwrap();
    assert_eq!(code(&["pipeline", "--config", s(&cfg)]), 2);
}
