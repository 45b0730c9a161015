use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn wdmatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wdmatch"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn wdmatch")
}

fn ok(args: &[&str]) -> String {
    let out = wdmatch(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    wdmatch(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small synthetic dataset with a fast config next to it.
fn dataset(dir: &Path) -> PathBuf {
    let spec = dir.join("spec.json");
    fs::write(&spec, r#"{"pairs": 240, "dev_pairs": 60, "test_pairs": 60}"#).unwrap();
    let data = dir.join("data");
    let out = ok(&["synth", "--spec", s(&spec), "--out-dir", s(&data), "--seed", "2"]);
    assert!(out.starts_with("oracle_w1="), "{out}");
    let path = data.join("config.json");
    let mut cfg: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    let t = cfg["training"].as_object_mut().unwrap();
    for (k, v) in [
        ("n1", json!(32)),
        ("n2", json!(32)),
        ("epochs", json!(2)),
        ("converge_steps", json!(20)),
        ("n_eval", json!(40)),
        ("critic_hidden", json!(16)),
    ] {
        t.insert(k.into(), v);
    }
    t["projector"]["feature_dim"] = json!(8);
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn train_eval_dump_and_diagnose() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dataset(dir.path());
    let run = dir.path().join("run");
    let out = ok(&["train", "--config", s(&cfg), "--out-dir", s(&run)]);
    assert!(out.contains("split=dev metric=accuracy"), "{out}");
    assert!(out.contains("split=test metric=accuracy"), "{out}");
    for f in [
        "manifest.json",
        "checkpoint.ckpt",
        "history.csv",
        "vocab.txt",
        "schema.json",
        "metrics.txt",
    ] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let history = fs::read_to_string(run.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);
    let manifest: Value = serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["artifacts"].as_array().unwrap().len(), 5);
    assert!(manifest["finished_unix"].is_u64());

    let ckpt = run.join("checkpoint.ckpt");
    let test = dir.path().join("data/test.tsv");
    let eval = ok(&["eval", "--checkpoint", s(&ckpt), "--data", s(&test)]);
    assert!(eval.starts_with("metric=accuracy value="), "{eval}");
    assert!(eval.trim_end().ends_with("n_examples=60"), "{eval}");
    assert_eq!(
        code(&[
            "eval",
            "--checkpoint",
            s(&ckpt),
            "--data",
            s(&test),
            "--task",
            "ranking"
        ]),
        2
    );

    let feats = dir.path().join("features.csv");
    ok(&[
        "dump-features",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&test),
        "--out",
        s(&feats),
    ]);
    let text = fs::read_to_string(&feats).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "domain,pair_index,f1,f2,f3,f4,f5,f6,f7,f8");
    assert_eq!(lines.count(), 120);

    let base = dir.path().join("base");
    ok(&["train", "--config", s(&cfg), "--out-dir", s(&base), "--no-regularizer"]);
    let diff = dir.path().join("diff.csv");
    let out = ok(&[
        "diagnose-wd",
        "--a",
        s(&base.join("checkpoint.ckpt")),
        "--b",
        s(&ckpt),
        "--data",
        s(&test),
        "--out",
        s(&diff),
    ]);
    assert!(out.contains("wd_diff="), "{out}");
    let rows: Vec<String> = fs::read_to_string(&diff).unwrap().lines().map(String::from).collect();
    assert_eq!(rows[0], "epoch,wd_a,wd_b,wd_diff");
    assert!(rows.last().unwrap().starts_with("final,"));
}

#[test]
fn same_seed_gives_identical_history_and_manifest_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dataset(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["train", "--config", s(&cfg), "--out-dir", s(&a), "--seed", "9"]);
    ok(&["train", "--config", s(&cfg), "--out-dir", s(&b), "--seed", "9"]);
    let read = |d: &Path| fs::read(d.join("history.csv")).unwrap();
    assert_eq!(read(&a), read(&b));

    let again = dir.path().join("again");
    ok(&[
        "train",
        "--manifest",
        s(&a.join("manifest.json")),
        "--out-dir",
        s(&again),
    ]);
    assert_eq!(read(&a), read(&again));

    let c = dir.path().join("c");
    ok(&["train", "--config", s(&cfg), "--out-dir", s(&c), "--seed", "10"]);
    assert_ne!(read(&a), read(&c));
}

#[test]
fn resume_continues_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dataset(dir.path());
    let (full, part) = (dir.path().join("full"), dir.path().join("part"));
    ok(&["train", "--config", s(&cfg), "--out-dir", s(&full), "--epochs", "3"]);
    ok(&["train", "--config", s(&cfg), "--out-dir", s(&part), "--epochs", "1"]);
    ok(&[
        "train",
        "--config",
        s(&cfg),
        "--resume",
        s(&part.join("checkpoint.ckpt")),
        "--epochs",
        "3",
    ]);
    let read = |d: &Path| fs::read_to_string(d.join("history.csv")).unwrap();
    assert_eq!(read(&full), read(&part));
    assert_eq!(
        fs::read(full.join("checkpoint.ckpt")).unwrap(),
        fs::read(part.join("checkpoint.ckpt")).unwrap()
    );
}

#[test]
fn resume_with_a_different_feature_dim_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dataset(dir.path());
    let run = dir.path().join("run");
    ok(&["train", "--config", s(&cfg), "--out-dir", s(&run), "--epochs", "1"]);
    let mut v: Value = serde_json::from_str(&fs::read_to_string(&cfg).unwrap()).unwrap();
    v["training"]["projector"]["feature_dim"] = json!(16);
    let other = dir.path().join("data/k16.json");
    fs::write(&other, v.to_string()).unwrap();
    let ckpt = run.join("checkpoint.ckpt");
    assert_eq!(code(&["train", "--config", s(&other), "--resume", s(&ckpt)]), 2);
    assert_eq!(
        code(&[
            "train",
            "--config",
            s(&cfg),
            "--resume",
            s(&dir.path().join("none.ckpt"))
        ]),
        3
    );

    let mut bytes = fs::read(&ckpt).unwrap();
    let last = bytes.len() - 3;
    bytes[last] ^= 1;
    let bad = dir.path().join("bad.ckpt");
    fs::write(&bad, bytes).unwrap();
    let test = dir.path().join("data/test.tsv");
    assert_eq!(code(&["eval", "--checkpoint", s(&bad), "--data", s(&test)]), 3);
}

#[test]
fn exit_codes_follow_error_classes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dataset(dir.path());
    let mut v: Value = serde_json::from_str(&fs::read_to_string(&cfg).unwrap()).unwrap();
    v["training"]["lamda"] = json!(0.1);
    let typo = dir.path().join("data/typo.json");
    fs::write(&typo, v.to_string()).unwrap();
    let out = wdmatch(&["train", "--config", s(&typo)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`lamda`"));

    assert_eq!(code(&["train", "--config", s(&cfg), "--lambda", "2"]), 2);

    let mut v: Value = serde_json::from_str(&fs::read_to_string(&cfg).unwrap()).unwrap();
    v["train"] = json!("missing.tsv");
    let missing = dir.path().join("data/missing.json");
    fs::write(&missing, v.to_string()).unwrap();
    assert_eq!(
        code(&["train", "--config", s(&missing), "--out-dir", s(&dir.path().join("m"))]),
        3
    );

    let blowup = dir.path().join("blowup");
    assert_eq!(
        code(&[
            "train",
            "--config",
            s(&cfg),
            "--out-dir",
            s(&blowup),
            "--lr-match",
            "1e300"
        ]),
        4
    );

    let spec = dir.path().join("neg.json");
    fs::write(&spec, r#"{"shift": -1.0}"#).unwrap();
    assert_eq!(
        code(&["synth", "--spec", s(&spec), "--out-dir", s(&dir.path().join("x"))]),
        2
    );
}

#[test]
fn default_out_dir_uses_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dataset(dir.path());
    let root = dir.path().join("runs");
    let out = Command::new(env!("CARGO_BIN_EXE_wdmatch"))
        .args(["train", "--config", s(&cfg), "--seed", "4", "--epochs", "1"])
        .env("WDMATCH_OUT", &root)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(root.join("config-seed4/history.csv").exists());
}

#[test]
fn selftest_reports_and_detects_faults() {
    let out = ok(&["selftest"]);
    assert_eq!(out.lines().filter(|l| l.starts_with("PASS ")).count(), 5, "{out}");
    let bad = wdmatch(&["selftest", "--inject-gradient-fault"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL gradients"));
}

#[test]
fn convert_writes_the_pair_format() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("snli.jsonl");
    fs::write(
        &src,
        "{\"gold_label\": \"neutral\", \"sentence1\": \"A dog runs.\", \"sentence2\": \"An animal moves.\"}\n\
         {\"gold_label\": \"-\", \"sentence1\": \"x\", \"sentence2\": \"y\"}\n",
    )
    .unwrap();
    let dst = dir.path().join("out.tsv");
    let out = ok(&["convert", "--format", "snli", "--input", s(&src), "--output", s(&dst)]);
    assert_eq!(out.trim(), "records=2");
    let text = fs::read_to_string(&dst).unwrap();
    assert_eq!(text.lines().next().unwrap(), "text_a\ttext_b\tlabel");
    assert!(text.contains("A dog runs.\tAn animal moves.\tneutral"));
    assert_eq!(
        code(&["convert", "--format", "csv", "--input", s(&src), "--output", s(&dst)]),
        2
    );
}

#[test]
fn identical_checkpoints_have_zero_wd_diff() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dataset(dir.path());
    let run = dir.path().join("run");
    ok(&["train", "--config", s(&cfg), "--out-dir", s(&run), "--epochs", "1"]);
    let ckpt = run.join("checkpoint.ckpt");
    let diff = dir.path().join("diff.csv");
    let test = dir.path().join("data/test.tsv");
    let out = ok(&[
        "diagnose-wd",
        "--a",
        s(&ckpt),
        "--b",
        s(&ckpt),
        "--data",
        s(&test),
        "--out",
        s(&diff),
    ]);
    assert!(out.trim_end().ends_with("wd_diff=0"), "{out}");
}

#[test]
fn synth_is_seeded_and_zero_shift_has_small_w1() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    fs::write(
        &spec,
        r#"{"pairs": 500, "dev_pairs": 20, "test_pairs": 20, "shift": 0.0}"#,
    )
    .unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let out = ok(&["synth", "--spec", s(&spec), "--out-dir", s(&a), "--seed", "3"]);
    ok(&["synth", "--spec", s(&spec), "--out-dir", s(&b), "--seed", "3"]);
    for f in [
        "train.tsv",
        "dev.tsv",
        "test.tsv",
        "embeddings.txt",
        "latents.csv",
        "config.json",
    ] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let w1: f64 = out
        .split_whitespace()
        .next()
        .unwrap()
        .trim_start_matches("oracle_w1=")
        .parse()
        .unwrap();
    assert!(w1 < 0.2, "{out}");
}

#[test]
fn ranking_eval_prints_map_and_mrr() {
    let dir = tempfile::tempdir().unwrap();
    let words = ["red", "blue", "green", "small", "large", "fast", "slow", "cold"];
    let mut rows = String::from("text_a\ttext_b\tlabel\tquery_id\n");
    for q in 0..30 {
        for c in 0..4 {
            let a = format!("{} {}", words[q % 8], words[(q / 8) % 8]);
            let b = format!("{} {}", words[(q + c) % 8], words[(q * c + 1) % 8]);
            rows.push_str(&format!("{a}\t{b}\t{}\tq{q}\n", usize::from(c == 0)));
        }
    }
    for split in ["train", "dev"] {
        fs::write(dir.path().join(format!("{split}.tsv")), &rows).unwrap();
    }
    let cfg = dir.path().join("rank.json");
    fs::write(
        &cfg,
        json!({
            "train": "train.tsv",
            "dev": "dev.tsv",
            "schema": {"kind": "ranking"},
            "training": {
                "task": {"kind": "ranking"},
                "epochs": 1,
                "n1": 16,
                "n2": 16,
                "n_eval": 20,
                "converge_steps": 10,
                "projector": {"embedding_dim": 8, "feature_dim": 8}
            }
        })
        .to_string(),
    )
    .unwrap();
    let run = dir.path().join("run");
    let out = ok(&["train", "--config", s(&cfg), "--out-dir", s(&run)]);
    assert!(out.contains("split=dev metric=map"), "{out}");
    let eval = ok(&[
        "eval",
        "--checkpoint",
        s(&run.join("checkpoint.ckpt")),
        "--data",
        s(&dir.path().join("dev.tsv")),
        "--task",
        "ranking",
    ]);
    let lines: Vec<&str> = eval.lines().collect();
    assert_eq!(lines.len(), 2, "{eval}");
    assert!(lines[0].starts_with("metric=map value=") && lines[0].ends_with("n_queries=30"));
    assert!(lines[1].starts_with("metric=mrr value="));
    assert_eq!(
        code(&[
            "eval",
            "--checkpoint",
            s(&dir.path().join("nope.ckpt")),
            "--data",
            s(&cfg)
        ]),
        3
    );
}
