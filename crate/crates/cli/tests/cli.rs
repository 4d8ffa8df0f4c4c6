use std::path::Path;
use std::process::{Command, Output};

fn logenc(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_logenc"))
        .current_dir(cwd)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const TINY: &str = r#"{"version": 1,
    "encoder": {"hidden_dim": 16, "num_layers": 1, "num_heads": 2, "ffn_dim": 32, "max_seq_len": 64},
    "train": {"batch_size": 4, "max_steps": 10, "warmup_steps": 2}}"#;

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = logenc(dir.path(), &["synth", "--bogus", "--out", "x.jsonl"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn bad_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), r#"{"version": 1, "train": {"max_step": 3}}"#).unwrap();
    let out = logenc(dir.path(), &["--config", "c.json", "synth", "--out", "x.jsonl"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    std::fs::write(dir.path().join("v.json"), r#"{"version": 9}"#).unwrap();
    let out = logenc(dir.path(), &["--config", "v.json", "synth", "--out", "x.jsonl"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("version"));
    let out = logenc(dir.path(), &["synth", "--family", "nope", "--out", "x.jsonl"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn domain_error_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = logenc(dir.path(), &["dedup", "--in", "missing.jsonl", "--out", "o.jsonl", "--report", "r.json"]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    assert!(stderr(&out).contains("missing.jsonl"));
    let out = logenc(dir.path(), &["synth", "--anomaly-rate", "1.5", "--out", "x.jsonl"]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
}

#[test]
fn synth_is_seeded_and_writes_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    for name in ["a.jsonl", "b.jsonl"] {
        let out = logenc(p, &["--seed", "5", "synth", "--family", "syslog", "--n", "50", "--out", name]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    let a = std::fs::read(p.join("a.jsonl")).unwrap();
    assert_eq!(a, std::fs::read(p.join("b.jsonl")).unwrap());
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 50);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(p.join("a.jsonl.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["global_seed"], 5);
    assert_eq!(manifest["outputs"][0]["path"], "a.jsonl");
    assert_eq!(manifest["outputs"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn train_then_evaluate_id_and_ood() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("c.json"), TINY).unwrap();
    let run = |args: &[&str]| {
        let mut full = vec!["--config", "c.json", "--threads", "2"];
        full.extend_from_slice(args);
        let out = logenc(p, &full);
        assert_eq!(code(&out), 0, "{args:?}: {}", stderr(&out));
        out
    };
    run(&["synth", "--family", "mixed", "--n", "300", "--out", "raw.jsonl"]);
    run(&["synth", "--family", "ood", "--n", "60", "--out", "ood.jsonl"]);
    run(&["dedup", "--in", "raw.jsonl", "--out", "train.jsonl", "--report", "dedup.json"]);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(p.join("dedup.json")).unwrap()).unwrap();
    assert_eq!(report["input_count"], 300);
    run(&["tokenizer", "train", "--in", "train.jsonl", "--vocab-size", "320", "--out", "tok.json"]);
    let enc = run(&["tokenizer", "encode", "--model", "tok.json", "--text", "sshd[1]: ok"]);
    assert!(!enc.stdout.is_empty());
    run(&["pretrain", "--corpus", "train.jsonl", "--tokenizer", "tok.json", "--out", "ck"]);
    for f in ["tokenizer.json", "loss_curve.csv"] {
        assert!(p.join("ck").join(f).exists(), "{f}");
    }
    run(&["eval", "intrinsic", "--model", "ck", "--data", "train.jsonl", "--tag", "IDTS", "--out", "idts.json"]);
    run(&["eval", "intrinsic", "--model", "ck", "--data", "ood.jsonl", "--tag", "ODTS", "--out", "odts.json"]);
    for (file, tag) in [("idts.json", "IDTS"), ("odts.json", "ODTS")] {
        let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p.join(file)).unwrap()).unwrap();
        assert_eq!(r["dataset_tag"], tag);
        assert!(r["perplexity"].as_f64().unwrap() >= 1.0);
        assert!(p.join(format!("{file}.manifest.json")).exists());
    }
    run(&["embed", "--model", "ck", "--in", "train.jsonl", "--out", "emb.jsonl"]);
    let sub = run(&["subsample", "--embeddings", "emb.jsonl", "--logs", "train.jsonl", "--n", "5"]);
    let sub: serde_json::Value = serde_json::from_slice(&sub.stdout).unwrap();
    assert_eq!(sub["selected"].as_array().unwrap().len(), 5);
    run(&["templates", "--in", "train.jsonl", "--out", "templates.json"]);
    run(&["detect", "--model", "ck", "--logs", "train.jsonl", "--top", "3", "--out", "detect.json"]);
    run(&["retrieve", "--model", "ck", "--docs", "emb.jsonl", "--query", "session opened", "--k", "3"]);
    run(&["synth", "--family", "incidents", "--n", "60", "--out", "inc.jsonl"]);
    run(&["triage", "--model", "ck", "--train", "inc.jsonl", "--test", "inc.jsonl", "--k", "3", "--out", "t.json"]);

    // Resuming continues from the saved step.
    run(&["pretrain", "--corpus", "train.jsonl", "--tokenizer", "tok.json", "--out", "ck", "--steps", "12", "--resume"]);
    let curve = std::fs::read_to_string(p.join("ck/loss_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 3, "{curve}");
    assert!(curve.lines().nth(1).unwrap().starts_with("10,"));
}
