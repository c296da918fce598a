use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dmlbench_cli::REPORT_SCHEMA;
use serde_json::Value;

fn dmlbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dmlbench")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

const QUICK: [&str; 6] = ["--steps", "20", "--eval-every", "10", "--embedding-dim", "16"];

fn run(dir: &Path, name: &str, extra: &[&str]) -> Value {
    let out = p(dir, name);
    let o = dmlbench(&[&["run"][..], &QUICK, extra, &["--out", &out]].concat());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_str(&fs::read_to_string(out).unwrap()).unwrap()
}

#[test]
fn incompatible_sampler_is_a_config_error() {
    let o = dmlbench(&["run", "--loss", "triplet-semihard", "--sampler", "npairs"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--sampler"));
}

#[test]
fn bad_flags_are_config_errors() {
    for args in [
        &["run", "--loss", "nope"][..],
        &["run", "--synthetic", "n_classes=abc"],
        &["run", "--encoder", "cnn"],
        &["run", "--no-such-flag"],
        &["run", "--loss", "dreml", "--members", "3", "--embedding-dim", "16"],
        &["sweep", "--axis", "batch-size", "--values", "1"],
    ] {
        assert_eq!(dmlbench(args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn report_matches_the_schema_and_table_layout() {
    let dir = tempfile::tempdir().unwrap();
    let report = run(dir.path(), "r.json", &["--loss", "proxy-softmax", "--binary"]);
    let schema: Value = serde_json::from_str(REPORT_SCHEMA).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(&report).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}");
    assert_eq!(report["wall_time_seconds"], Value::Null);
    assert_eq!(report["history"].as_array().unwrap().len(), 3);
    let table = fs::read_to_string(dir.path().join("r.txt")).unwrap();
    let header = table.lines().nth(1).unwrap();
    assert_eq!(header.split_whitespace().collect::<Vec<_>>(), ["step", "R@1", "R@2", "R@4", "R@8", "R@16", "NMI"]);
}

#[test]
fn schema_rejects_malformed_reports() {
    let schema: Value = serde_json::from_str(REPORT_SCHEMA).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut report = run(dir.path(), "r.json", &["--loss", "proxy-nca"]);
    report["history"][0]["recall_at"]["1"] = Value::from(1.5);
    assert!(!validator.is_valid(&report));
}

#[test]
fn divergence_exits_one_with_partial_history() {
    let dir = tempfile::tempdir().unwrap();
    let out = p(dir.path(), "r.json");
    let o =
        dmlbench(&["run", "--loss", "npairs", "--normalize", "false", "--lr", "1e200", "--steps", "50", "--out", &out]);
    assert_eq!(o.status.code(), Some(1));
    let report: Value = serde_json::from_str(&fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(report["status"], "failed");
    assert!(report["error"].as_str().unwrap().contains("npairs"));
    assert_eq!(report["history"].as_array().unwrap().len(), 1);
}

#[test]
fn sweep_rows_and_error_cells() {
    let dir = tempfile::tempdir().unwrap();
    let out = p(dir.path(), "s.csv");
    let o = dmlbench(
        &[
            &["sweep", "--axis", "batch-size", "--values", "2,8,32,128", "--losses", "triplet-semihard,proxy-nca"][..],
            &QUICK,
            &["--workers", "2", "--out", &out],
        ]
        .concat(),
    );
    assert_eq!(o.status.code(), Some(0));
    let mut reader = csv::Reader::from_path(&out).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header[..2], ["axis_value", "loss"]);
    assert!(header.contains(&"recall_at_16".to_string()) && header.contains(&"nmi".to_string()));
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 8);
    let err_col = header.iter().position(|h| h == "error").unwrap();
    // a 2-sample triplet batch has no room for positives and negatives
    assert!(!rows[0][err_col].is_empty());
    assert!(rows[1..].iter().all(|r| r[err_col].is_empty()));
}

#[test]
fn single_value_sweep_equals_run() {
    let dir = tempfile::tempdir().unwrap();
    let report = run(dir.path(), "r.json", &["--loss", "lifted", "--batch-size", "32"]);
    let out = p(dir.path(), "s.csv");
    let o = dmlbench(
        &[&["sweep", "--axis", "batch-size", "--values", "32", "--losses", "lifted"][..], &QUICK, &["--out", &out]]
            .concat(),
    );
    assert_eq!(o.status.code(), Some(0));
    let mut reader = csv::Reader::from_path(&out).unwrap();
    let header = reader.headers().unwrap().clone();
    let row = reader.records().next().unwrap().unwrap();
    let last = report["history"].as_array().unwrap().last().unwrap();
    for (k, col) in [("1", "recall_at_1"), ("16", "recall_at_16")] {
        let i = header.iter().position(|h| h == col).unwrap();
        assert_eq!(row[i].parse::<f64>().unwrap(), last["recall_at"][k].as_f64().unwrap());
    }
    let i = header.iter().position(|h| h == "nmi").unwrap();
    assert_eq!(row[i].parse::<f64>().unwrap(), last["nmi"].as_f64().unwrap());
}

#[test]
fn loss_axis_sweep() {
    let o = dmlbench(&[&["sweep", "--axis", "loss", "--values", "proxy-nca,npairs"][..], &QUICK].concat());
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().nth(2).unwrap().starts_with("npairs,npairs,"));
}

#[test]
fn verify_filter_and_mutation() {
    let o = dmlbench(&["verify", "--only", "grad-check"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS grad-check/")).count(), 11);
    assert!(!text.contains("mining/"));

    let o = dmlbench(&["verify", "--only", "grad-check", "--mutate", "sign-flip"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).lines().any(|l| l.starts_with("FAIL grad-check/")));
}

#[test]
fn full_verify_passes() {
    let o = dmlbench(&["verify"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
}

#[test]
fn csv_dataset_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("label,f0,f1,f2\n");
    for i in 0..48 {
        let c = i % 6;
        text.push_str(&format!("{},{},{},{}\n", 10 + c, c as f64 * 5.0 + (i as f64 * 0.37).sin(), -(c as f64), i % 2));
    }
    let data = p(dir.path(), "d.csv");
    fs::write(&data, text).unwrap();
    let report = run(dir.path(), "r.json", &["--dataset", &data, "--loss", "proxy-nca", "--batch-size", "12"]);
    assert_eq!(report["config"]["dataset"]["source"], "csv");
    assert_eq!(report["config"]["train"]["encoder"]["input_dim"], 3);
}
