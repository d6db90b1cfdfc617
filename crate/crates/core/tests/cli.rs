mod common;

use std::process::{Command, Output};

use common::mutag_dir;

fn graphlstm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_graphlstm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn missing_dataset_exits_2_and_names_the_path() {
    let o = graphlstm(&["cv", "--dataset", "/nonexistent/NOPE"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/NOPE"), "{}", stderr(&o));
}

#[test]
fn invalid_value_exits_1_and_names_the_key() {
    let mutag = mutag_dir();
    let o = graphlstm(&["cv", "--dataset", mutag.to_str().unwrap(), "--tau=-2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("tau"), "{}", stderr(&o));
}

#[test]
fn unknown_key_exits_1_and_names_the_key() {
    let mutag = mutag_dir();
    let o = graphlstm(&[
        "cv",
        "--dataset",
        mutag.to_str().unwrap(),
        "--set",
        "hiddn=3",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("hiddn"), "{}", stderr(&o));
}

#[test]
fn bad_config_file_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    std::fs::write(&path, r#"{"d": 16, "ordering": "sideways"}"#).unwrap();
    let o = graphlstm(&["cv", "--config", path.to_str().unwrap(), "--dataset", "/x"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("ordering"), "{}", stderr(&o));
}

#[test]
fn unknown_verb_exits_1() {
    let o = graphlstm(&["fly"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn help_exits_0() {
    let o = graphlstm(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    for verb in [
        "pretrain",
        "train",
        "cv",
        "ablate-ordering",
        "ablate-embedding",
        "grid",
    ] {
        assert!(text.contains(verb), "{verb}");
    }
}

#[test]
fn cv_writes_outputs() {
    let mutag = mutag_dir();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = graphlstm(&[
        "cv",
        "--dataset",
        mutag.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--epochs",
        "1",
        "--folds",
        "2",
        "--set",
        "max_nodes=12",
        "--set",
        "pretrain_epochs=1",
        "--set",
        "d=8",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for file in ["config.json", "metrics.csv", "summary.json"] {
        assert!(out.join(file).is_file(), "{file}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let folds = summary["per_fold_accuracy"].as_array().unwrap();
    assert_eq!(folds.len(), 2);
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(csv.lines().next().unwrap().contains("seconds"));
}

fn snapshot(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.display().to_string(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn commands_leave_the_dataset_untouched() {
    let mutag = mutag_dir();
    let before = snapshot(&mutag);
    let dir = tempfile::tempdir().unwrap();
    for verb in ["pretrain", "train"] {
        let out = dir.path().join(verb);
        let o = graphlstm(&[
            verb,
            "--dataset",
            mutag.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--epochs",
            "1",
            "--set",
            "max_nodes=12",
            "--set",
            "pretrain_epochs=1",
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    assert_eq!(snapshot(&mutag), before);
}
