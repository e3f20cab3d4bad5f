use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cane::data::{parse_feature_line, LabelDictionary};
use cane::persist;
use cane::CaneModel;
use cane::search::predict_top_j;

fn cane(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cane")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = cane(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Twelve classes with labels 10, 20, ...; class c lights up features c+1 and c+13.
fn write_data(dir: &Path) -> PathBuf {
    let mut text = String::new();
    for rep in 0..8 {
        for c in 0..12 {
            let w = 0.6 + 0.05 * ((rep + c) % 5) as f64;
            writeln!(text, "{} {}:{w} {}:0.3 25:0.1", 10 * (c + 1), c + 1, c + 13).unwrap();
        }
    }
    let path = dir.join("data.svm");
    std::fs::write(&path, text).unwrap();
    path
}

fn build_tree(dir: &Path, data: &Path, b: &str, name: &str) -> PathBuf {
    let tree = dir.join(name);
    ok(&["build-tree", "--input", s(data), "--branching", b, "--seed", "3", "--output", s(&tree)]);
    tree
}

fn train(data: &Path, tree: &Path, model: &Path, extra: &[&str]) {
    let mut args = vec![
        "train", "--data", s(data), "--tree", s(tree), "--candidates", "3", "--noises", "3", "--lr", "0.5",
        "--seed", "9", "--model-out", s(model),
    ];
    if !extra.contains(&"--epochs") {
        args.extend_from_slice(&["--epochs", "8"]);
    }
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn build_tree_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path());
    let a = build_tree(dir.path(), &data, "3", "a.json");
    let b = build_tree(dir.path(), &data, "3", "b.json");
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(persist::load_tree(&a).unwrap().depth(), 3);
    let flat = build_tree(dir.path(), &data, "16", "flat.json");
    assert_eq!(persist::load_tree(&flat).unwrap().depth(), 1);
}

#[test]
fn train_eval_predict_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path());
    let tree = build_tree(dir.path(), &data, "3", "t.json");
    let (m1, m2) = (dir.path().join("m1.bin"), dir.path().join("m2.bin"));
    let metrics = dir.path().join("metrics.jsonl");
    train(&data, &tree, &m1, &["--metrics-out", s(&metrics), "--eval-data", s(&data)]);
    train(&data, &tree, &m2, &[]);
    assert_eq!(std::fs::read(&m1).unwrap(), std::fs::read(&m2).unwrap());

    let lines: Vec<serde_json::Value> = std::fs::read_to_string(&metrics)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 8);
    for key in ["epoch", "examples_seen", "sampled_objective_mean", "test_accuracy_top1", "coverage_topNc", "wall_seconds"] {
        assert!(lines[7].get(key).is_some(), "missing {key}");
    }

    let report: serde_json::Value =
        serde_json::from_slice(&ok(&["eval", "--model", s(&m1), "--data", s(&data), "--top", "12"]).stdout).unwrap();
    let acc = report["accuracy"].as_array().unwrap();
    assert_eq!(acc.len(), 12);
    assert_eq!(acc[11].as_f64(), Some(1.0));
    assert!(acc[0].as_f64().unwrap() > 0.9, "{report}");

    let out = ok(&["predict", "--model", s(&m1), "--input", s(&data), "--top", "4"]);
    let (model, _) = persist::load_model(&m1).unwrap();
    let text = std::fs::read_to_string(&data).unwrap();
    let printed: Vec<&str> = std::str::from_utf8(&out.stdout).unwrap().lines().collect();
    assert_eq!(printed.len(), 96);
    for (i, (line, got)) in text.lines().zip(&printed).enumerate() {
        let x = parse_feature_line(i + 1, line).unwrap();
        let want: Vec<String> = predict_top_j(&model, &x, 4).iter().map(|c| c.to_string()).collect();
        assert_eq!(*got, want.join(" "));
    }
}

#[test]
fn zero_power_unigram_matches_uniform() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path());
    let tree = build_tree(dir.path(), &data, "4", "t.json");
    let (a, b) = (dir.path().join("a.bin"), dir.path().join("b.bin"));
    train(&data, &tree, &a, &[]);
    train(&data, &tree, &b, &["--sampler", "unigram", "--power", "0"]);
    let (ma, _) = persist::load_model(&a).unwrap();
    let (mb, _) = persist::load_model(&b).unwrap();
    assert_eq!(ma.params, mb.params);
}

#[test]
fn untrained_model_predicts_lowest_ids() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path());
    let tree = build_tree(dir.path(), &data, "3", "t.json");
    let model = dir.path().join("zero.bin");
    let zero = CaneModel::zeros(persist::load_tree(&tree).unwrap(), LabelDictionary::identity(12), 25);
    persist::save_model(&model, &zero, None).unwrap();
    let input = dir.path().join("x.txt");
    std::fs::write(&input, "1:1 5:2\n7:0.5\n").unwrap();
    let out = ok(&["predict", "--model", s(&model), "--input", s(&input), "--top", "3"]);
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "0 1 2\n0 1 2\n");
}

#[test]
fn verify_exit_codes() {
    let out = ok(&["verify", "gradcheck", "--instances", "10"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["pass"], true);
    ok(&["verify", "corollary1"]);
    assert_eq!(cane(&["verify", "corollary1", "--eps", "0.3"]).status.code(), Some(2));
}

#[test]
fn usage_and_io_errors() {
    assert_eq!(cane(&["train"]).status.code(), Some(1));
    assert_eq!(cane(&["eval", "--bogus"]).status.code(), Some(1));
    assert_eq!(cane(&["--help"]).status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path());
    let tree = build_tree(dir.path(), &data, "3", "t.json");
    let model = dir.path().join("m.bin");
    train(&data, &tree, &model, &["--epochs", "1"]);
    let unseen = dir.path().join("unseen.svm");
    std::fs::write(&unseen, "999 1:1\n").unwrap();
    assert_eq!(cane(&["eval", "--model", s(&model), "--data", s(&unseen)]).status.code(), Some(3));
    let missing = dir.path().join("nope.svm");
    assert_eq!(cane(&["build-tree", "--input", s(&missing), "--branching", "2", "--seed", "0", "--output", "x"]).status.code(), Some(3));
}
