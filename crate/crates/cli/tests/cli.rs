use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cartforest(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cartforest"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn cartforest")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = cartforest(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(str::to_owned)
        .collect()
}

const TOY: &str = "x1,y\n0.1,1\n0.2,1\n0.8,3\n0.9,3\n";

#[test]
fn depth_one_toy_tree_has_three_nodes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("toy.csv"), TOY).unwrap();
    ok(d, &["train", "--data", "toy.csv", "--depth", "1", "--out", "tree.json", "--summary", "s.csv"]);
    let tree: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("tree.json")).unwrap()).unwrap();
    let nodes = tree["nodes"].as_array().unwrap();
    assert_eq!(nodes.len(), 3);
    assert_eq!(lines(&d.join("s.csv")), ["depth,train_mse", "0,1", "1,0"]);

    ok(d, &["predict", "--model", "tree.json", "--data", "toy.csv", "--out", "pred.csv"]);
    assert_eq!(lines(&d.join("pred.csv")), ["prediction", "1", "1", "3", "3"]);
}

#[test]
fn forest_round_trip_through_predict() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--n", "200", "--p", "4", "--seed", "2", "--out", "data.csv"]);
    ok(d, &["train", "--data", "data.csv", "--depth", "3", "--trees", "5", "--seed", "1", "--out", "f.json"]);
    let stdout = ok(d, &["predict", "--model", "f.json", "--data", "data.csv"]);
    let preds: Vec<f64> = stdout.lines().skip(1).map(|l| l.parse().unwrap()).collect();
    assert_eq!(preds.len(), 200);
    assert!(preds.iter().all(|v| v.is_finite()));
}

#[test]
fn prune_writes_model_and_path() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--n", "300", "--p", "3", "--seed", "4", "--out", "data.csv"]);
    ok(d, &["train", "--data", "data.csv", "--depth", "4", "--out", "tree.json"]);
    ok(d, &["prune", "--model", "tree.json", "--data", "data.csv", "--alpha", "1e9", "--out", "root.json", "--prune-path", "path.csv"]);
    let root: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("root.json")).unwrap()).unwrap();
    assert_eq!(root["nodes"].as_array().unwrap().len(), 1);
    let path = lines(&d.join("path.csv"));
    assert_eq!(path[0], "alpha,size,train_mse");
    assert_eq!(path.last().unwrap().split(',').nth(1), Some("1"));
}

#[test]
fn experiment_with_single_grid_point_has_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let stdout = ok(d, &["experiment", "--grid", "64", "--replicates", "1", "--test-size", "100"]);
    assert_eq!(stdout.lines().count(), 2, "{stdout}");
}

#[test]
fn verify_writes_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let stdout = ok(d, &["verify", "--suite", "lemma2", "--corpus", "5", "--out-dir", "out"]);
    let summary: serde_json::Value = serde_json::from_str(stdout.trim()).unwrap();
    assert_eq!(summary["violations"], 0);
    assert!(d.join("out/lemma2.csv").exists());
    assert!(d.join("out/lemma2_summary.json").exists());
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("toy.csv"), TOY).unwrap();
    for args in [
        &["train", "--data", "toy.csv", "--out", "t.json"][..],
        &["train", "--data", "toy.csv", "--depth", "2", "--mtry", "0", "--out", "t.json"],
        &["verify", "--suite", "nope"],
        &["--threads", "0", "verify", "--suite", "lemma2"],
    ] {
        assert_eq!(cartforest(d, args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn bad_inputs_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("broken.json"), "{\"nodes\": [").unwrap();
    fs::write(d.join("toy.csv"), TOY).unwrap();
    fs::write(d.join("empty.csv"), "x1,y\n").unwrap();
    fs::write(d.join("junk.csv"), "x1,y\n0.1,abc\n").unwrap();
    for args in [
        &["predict", "--model", "broken.json", "--data", "toy.csv"][..],
        &["train", "--data", "missing.csv", "--depth", "1", "--out", "t.json"],
        &["train", "--data", "empty.csv", "--depth", "1", "--out", "t.json"],
        &["train", "--data", "junk.csv", "--depth", "1", "--out", "t.json"],
    ] {
        assert_eq!(cartforest(d, args).status.code(), Some(3), "{args:?}");
    }
}
