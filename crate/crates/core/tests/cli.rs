//! Command-line contract: outputs, determinism and exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn tif(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tif"))
        .args(["--threads", "1"])
        .args(args)
        .env_remove("TIF_SEED")
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn tif")
}

fn ok(args: &[&str]) -> Output {
    let out = tif(args);
    assert!(
        out.status.success(),
        "tif {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(args: &[&str]) -> i32 {
    tif(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn gen(dir: &Path, n: usize, seed: u64) -> PathBuf {
    let out = dir.join(format!("data_{n}_{seed}"));
    ok(&[
        "gen", "--dataset", "graphcycle", "--n", &n.to_string(), "--scale", "0.1", "--seed",
        &seed.to_string(), "--out", s(&out),
    ]);
    out
}

fn train(data: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec!["train", "--data", s(data), "--epochs", "2", "--seed", "3", "--out", s(out)];
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn gen_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let checksum = |p: PathBuf| read_json(&p.join("manifest.json"))["checksum"].clone();
    let a = checksum(gen(dir.path(), 20, 7));
    let b = checksum(gen(&dir.path().join("again"), 20, 7));
    let c = checksum(gen(dir.path(), 20, 8));
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&["gen", "--dataset", "graphcycle"]), 2);
    assert_eq!(code(&["gen", "--dataset", "nosuch", "--out", "/tmp/x"]), 2);
    assert_eq!(code(&["frobnicate"]), 2);

    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), 20, 1);
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "seed = 1\nnot_a_key = 3\n").unwrap();
    let out = dir.path().join("run");
    assert_eq!(
        code(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&out)]),
        2
    );
}

#[test]
fn train_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), 30, 2);
    let run = dir.path().join("run");
    train(&data, &run, &["--variant", "no-pm", "--branches", "3"]);
    for f in ["config.resolved.toml", "curve.csv", "model.ckpt", "metrics.json"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let curve = std::fs::read_to_string(run.join("curve.csv")).unwrap();
    let mut lines = curve.lines();
    assert_eq!(
        lines.next().unwrap(),
        "epoch,train_loss,train_accuracy,val_loss,val_accuracy"
    );
    assert_eq!(lines.count(), 2);
    let m = read_json(&run.join("metrics.json"));
    assert_eq!(m["epochs"], 2);
    assert_eq!(m["profile"], "no-pm");
    for role in ["train", "val", "test"] {
        let acc = m[role]["accuracy"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }
    let resolved = std::fs::read_to_string(run.join("config.resolved.toml")).unwrap();
    assert!(resolved.contains("branches = 3"), "{resolved}");
}

#[test]
fn zero_epochs_is_evaluation_only() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), 20, 4);
    let run = dir.path().join("run");
    ok(&["train", "--data", s(&data), "--epochs", "0", "--seed", "3", "--out", s(&run)]);
    let m = read_json(&run.join("metrics.json"));
    assert_eq!(m["epochs"], 0);
    for role in ["train", "val"] {
        assert_eq!(m["initial"][role]["accuracy"], m[role]["accuracy"]);
        assert_eq!(m["initial"][role]["count"], m[role]["count"]);
    }
}

#[test]
fn explain_writes_json_and_dot() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), 20, 5);
    let run = dir.path().join("run");
    train(&data, &run, &[]);
    let ckpt = run.join("model.ckpt");
    let ex = dir.path().join("ex");
    ok(&["explain", "--checkpoint", s(&ckpt), "--data", s(&data), "--index", "0", "--index", "3", "--out", s(&ex)]);
    for i in [0, 3] {
        let t = read_json(&ex.join(format!("trace_{i}.json")));
        let levels = t["levels"].as_array().unwrap();
        assert_eq!(levels.len(), 2);
        for l in levels {
            let probs: Vec<f64> = l["probs"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(l["selected"].as_u64().unwrap() < probs.len() as u64);
        }
        let dot = std::fs::read_to_string(ex.join(format!("trace_{i}.dot"))).unwrap();
        assert!(dot.starts_with("digraph"));
        assert_eq!(dot.matches('{').count(), dot.matches('}').count());
        let chosen = dot.lines().filter(|l| l.contains("->") && l.contains("style=bold")).count();
        assert_eq!(chosen, 3);
    }

    let all = dir.path().join("all");
    ok(&["explain", "--checkpoint", s(&ckpt), "--data", s(&data), "--all-test", "--out", s(&all)]);
    let n = std::fs::read_dir(&all)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "json"))
        .count();
    assert_eq!(n, 2);

    assert_eq!(
        code(&["explain", "--checkpoint", s(&ckpt), "--data", s(&data), "--index", "20", "--out", s(&ex)]),
        2
    );
}

#[test]
fn eval_reports_requested_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), 30, 6);
    let run = dir.path().join("run");
    train(&data, &run, &[]);
    let ckpt = run.join("model.ckpt");

    let out = ok(&["eval", "--checkpoint", s(&ckpt), "--data", s(&data)]);
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    let keys: Vec<_> = doc["metrics"].as_object().unwrap().keys().cloned().collect();
    assert_eq!(keys, ["acc", "f1"]);

    let file = dir.path().join("eval.json");
    ok(&[
        "eval", "--checkpoint", s(&ckpt), "--data", s(&data), "--metrics", "path-consistency,consistency",
        "--noise", "0", "--runs", "3", "--out", s(&file),
    ]);
    let doc = read_json(&file);
    assert_eq!(doc["metrics"]["path-consistency"], 1.0);
    let c = doc["metrics"]["consistency"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&c));
}

#[test]
fn consistency_without_ground_truth_exits_4() {
    let mutag = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/MUTAG");
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    ok(&["train", "--data", s(&mutag), "--epochs", "0", "--levels", "1", "--out", s(&run)]);
    let ckpt = run.join("model.ckpt");
    assert_eq!(
        code(&["eval", "--checkpoint", s(&ckpt), "--data", s(&mutag), "--metrics", "consistency"]),
        4
    );
    ok(&["eval", "--checkpoint", s(&ckpt), "--data", s(&mutag), "--metrics", "acc"]);
}
