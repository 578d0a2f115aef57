use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const APP: &str = "def parse(text):\n    \"\"\"Split a line into fields.\"\"\"\n    return text.split(',')\n\n\ndef first(line):\n    fields = parse(line)\n    if fields:\n        return fields[0]\n    return None\n\n\ndef count(line):\n    return len(parse(line))\n";

fn run(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_callerkit"));
    cmd.args(args).current_dir(dir).env_remove("CALLERKIT_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn records(path: &Path) -> (Value, Vec<Value>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines().map(|l| serde_json::from_str::<Value>(l).unwrap());
    let header = lines.next().unwrap();
    (header, lines.collect())
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("repo/tools")).unwrap();
    std::fs::write(dir.path().join("repo/tools/app.py"), APP).unwrap();
    dir
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["frobnicate"], &[]).status.code(), Some(2));
    assert_eq!(run(dir.path(), &["eval", "--tasks", "t.jsonl"], &[]).status.code(), Some(2));
    assert_eq!(run(dir.path(), &["--help"], &[]).status.code(), Some(0));
}

#[test]
fn domain_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["eval", "--tasks", "missing.jsonl", "--candidates", "c.jsonl"], &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    let bad = run(dir.path(), &["render", "--tasks", "t.jsonl", "--config", "caller+nl"], &[]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn corpus_pipeline_with_provenance() {
    let dir = setup();
    let p = dir.path();
    let out = run(p, &["corpus", "--repo", "repo", "--out", "corpus.jsonl"], &[("CALLERKIT_SEED", "7")]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, instances) = records(&p.join("corpus.jsonl"));
    let prov = &header["_provenance"];
    assert_eq!(prov["seed"], 7);
    assert_eq!(prov["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(prov["config_digest"].as_str().unwrap().len(), 64);
    assert_eq!(instances.len(), 2);
    assert!(instances.iter().all(|i| i["target_qname"] == "tools.app.parse"));

    let stats = run(p, &["--json", "stats", "corpus.jsonl"], &[]);
    assert!(stats.status.success());
    let v: Value = serde_json::from_slice(&stats.stdout).unwrap();
    assert!(v.is_object(), "{v}");

    let text = run(p, &["stats", "corpus.jsonl"], &[]);
    assert!(text.status.success());
    assert!(!String::from_utf8_lossy(&text.stdout).trim_start().starts_with('{'));

    let vars = run(p, &["variants", "--corpus", "corpus.jsonl", "--kind", "data_flow", "--out", "v.jsonl"], &[]);
    assert!(vars.status.success(), "{}", String::from_utf8_lossy(&vars.stderr));
    let (_, variants) = records(&p.join("v.jsonl"));
    assert!(!variants.is_empty());

    let bad_kind = run(p, &["variants", "--corpus", "corpus.jsonl", "--kind", "nonsense"], &[]);
    assert_eq!(bad_kind.status.code(), Some(1));
}

#[test]
fn config_file_and_env_override() {
    let dir = setup();
    let p = dir.path();
    std::fs::write(p.join("cfg.json"), r#"{"seed": 3}"#).unwrap();
    let args = ["--config-file", "cfg.json", "corpus", "--repo", "repo", "--out", "a.jsonl"];
    assert!(run(p, &args, &[]).status.success());
    assert_eq!(records(&p.join("a.jsonl")).0["_provenance"]["seed"], 3);
    let args = ["--config-file", "cfg.json", "corpus", "--repo", "repo", "--out", "b.jsonl"];
    assert!(run(p, &args, &[("CALLERKIT_SEED", "11")]).status.success());
    let (hb, _) = records(&p.join("b.jsonl"));
    assert_eq!(hb["_provenance"]["seed"], 11);
    assert_ne!(records(&p.join("a.jsonl")).0["_provenance"]["config_digest"], hb["_provenance"]["config_digest"]);
    assert_eq!(run(p, &["stats", "a.jsonl"], &[("CALLERKIT_SEED", "x")]).status.code(), Some(1));
}

#[test]
fn metrics_report() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(
        p.join("pairs.jsonl"),
        "{\"id\":\"a\",\"candidate\":\"x = a + b\",\"reference\":\"x = a - b\"}\n{\"id\":\"b\",\"candidate\":\"y = 1\",\"reference\":\"y = 1\"}\n",
    )
    .unwrap();
    let out = run(p, &["--json", "metrics", "--pairs", "pairs.jsonl", "--out", "m.jsonl"], &[]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["pairs"], 2);
    let (_, scores) = records(&p.join("m.jsonl"));
    assert!((scores[1]["codebleu"].as_f64().unwrap() - 1.0).abs() < 1e-6);
    assert!((scores[0]["codebleu"].as_f64().unwrap() - 0.251_428_7).abs() < 1e-6);
}
