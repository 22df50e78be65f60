use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fusicl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fusicl"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// Checkpoint, task, template and config in a fresh directory.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = fusicl(
        d,
        &[
            "init-toy",
            "--d-model",
            "16",
            "--heads",
            "2",
            "--layers",
            "1",
            "--seed",
            "3",
            "--out",
            "toy.ckpt",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let words = [
        "good fun",
        "dull",
        "great cast",
        "slow plot",
        "fine score",
        "awful",
        "fun film",
        "bad",
    ];
    let task: String = words
        .iter()
        .enumerate()
        .map(|(i, w)| {
            format!("{{\"id\":\"r{i}\",\"fields\":{{\"text\":\"{w}\"}},\"options\":[\"yes\",\"no\"],\"answer_idx\":{}}}\n", i % 2)
        })
        .collect();
    fs::write(d.join("task.jsonl"), task).unwrap();
    fs::write(
        d.join("tpl.json"),
        r#"{"input_template": "Review: {text}\nPositive?", "target_template": " {answer}"}"#,
    )
    .unwrap();
    fs::write(
        d.join("run.json"),
        r#"{"checkpoint": "toy.ckpt", "task": "task.jsonl", "template": "tpl.json",
            "plan": {"placement": "encoder", "use_sentinel": true}, "mode": "late", "k": 2, "seed": 1}"#,
    )
    .unwrap();
    dir
}

#[test]
fn eval_json_report_and_overrides() {
    let dir = workspace();
    let out = fusicl(
        dir.path(),
        &[
            "eval", "--config", "run.json", "--limit", "3", "--mode", "early", "--report", "r.json",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(report["mode"], "early");
    assert_eq!(report["n_evaluated"], 3);
    assert_eq!(report["k"], 2);
    assert!(report["created_at"].is_u64());
    let summary: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(summary["aggregate"], report["aggregate"]);
}

#[test]
fn eval_prints_full_report_without_path() {
    let dir = workspace();
    let out = fusicl(
        dir.path(),
        &["eval", "--config", "run.json", "--k", "1", "--limit", "2"],
    );
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["examples"].as_array().unwrap().len(), 2);
}

#[test]
fn csv_rows_append() {
    let dir = workspace();
    for mode in ["original", "late"] {
        let out = fusicl(
            dir.path(),
            &[
                "eval", "--config", "run.json", "--mode", mode, "--limit", "2", "--report",
                "runs.csv",
            ],
        );
        assert!(out.status.success());
    }
    let text = fs::read_to_string(dir.path().join("runs.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("task,mode,k,seed"));
    assert!(lines[1].starts_with("task,original,2,1"));
    assert!(lines[2].starts_with("task,late,2,1"));
}

#[test]
fn generate_emits_json_lines() {
    let dir = workspace();
    let out = fusicl(
        dir.path(),
        &[
            "generate",
            "--config",
            "run.json",
            "--max-new-tokens",
            "3",
            "--limit",
            "2",
        ],
    );
    assert!(out.status.success());
    let lines: Vec<serde_json::Value> = stdout(&out)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0]["text"].is_string());
}

#[test]
fn permute_reports_orderings() {
    let dir = workspace();
    let out = fusicl(
        dir.path(),
        &[
            "permute",
            "--config",
            "run.json",
            "--orderings",
            "all",
            "--n-examples",
            "2",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["permutation"]["n_orderings"], 2);
    assert_eq!(report["permutation"]["std"], 0.0);

    let out = fusicl(
        dir.path(),
        &[
            "permute",
            "--config",
            "run.json",
            "--orderings",
            "sample:3",
            "--k",
            "4",
            "--n-examples",
            "1",
        ],
    );
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["permutation"]["n_orderings"], 3);
}

#[test]
fn encode_shows_ids() {
    let dir = tempfile::tempdir().unwrap();
    let out = fusicl(dir.path(), &["encode", "--text", "A<extra_id_0>"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(v["ids"], serde_json::json!([80, 2]));
    assert_eq!(v["tokens"], serde_json::json!(["A", "<extra_id_0>"]));
}

#[test]
fn exit_codes() {
    let dir = workspace();
    let d = dir.path();
    // validation problems exit with 2
    assert_eq!(
        fusicl(d, &["eval", "--config", "run.json", "--k", "0"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        fusicl(d, &["eval", "--config", "run.json", "--mode", "sideways"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        fusicl(d, &["eval", "--config", "absent.json"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        fusicl(d, &["permute", "--config", "run.json", "--k", "7"])
            .status
            .code(),
        Some(2)
    );
    fs::write(
        d.join("bad_plan.json"),
        fs::read_to_string(d.join("run.json"))
            .unwrap()
            .replace("\"encoder\"", "\"decoder\""),
    )
    .unwrap();
    let out = fusicl(d, &["eval", "--config", "bad_plan.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    // a checkpoint that cannot be read is a runtime failure
    fs::write(
        d.join("no_ckpt.json"),
        fs::read_to_string(d.join("run.json"))
            .unwrap()
            .replace("toy.ckpt", "gone.ckpt"),
    )
    .unwrap();
    assert_eq!(
        fusicl(d, &["eval", "--config", "no_ckpt.json"])
            .status
            .code(),
        Some(1)
    );
}
