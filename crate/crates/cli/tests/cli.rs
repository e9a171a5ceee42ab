use std::path::Path;
use std::process::{Command, Output};

fn gclab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gclab")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = gclab(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth_sbm(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("sbm.json");
    ok(&["synth", "--out", s(&path), "--blocks", "20,20", "--p-in", "0.4", "--p-out", "0.02", "--feat-dim", "4"]);
    path
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_sbm(dir.path());
    assert_eq!(gclab(&["--help"]).status.code(), Some(0));
    assert_eq!(gclab(&["run"]).status.code(), Some(1));
    assert_eq!(gclab(&["run", "--dataset", s(&data), "--layers", "5"]).status.code(), Some(1));
    assert_eq!(gclab(&["run", "--dataset", s(&data), "--encoder", "transformer"]).status.code(), Some(1));
    assert_eq!(gclab(&["run", "--dataset", s(&data), "--sampler", "graphcl"]).status.code(), Some(1));
    assert_eq!(gclab(&["run", "--dataset", s(&dir.path().join("missing.json"))]).status.code(), Some(2));
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    assert_eq!(gclab(&["run", "--dataset", s(&bad)]).status.code(), Some(2));
    assert_eq!(gclab(&["preset", "nope"]).status.code(), Some(1));
}

#[test]
fn run_prints_report_and_appends_rows() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_sbm(dir.path());
    let csv = dir.path().join("out.csv");
    let out = ok(&["run", "--dataset", s(&data), "--preset", "gae", "--epochs", "2", "--out", s(&csv)]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let acc = report["test_accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert_eq!(report["fold_accuracies"].as_array().unwrap().len(), 5);
    ok(&["run", "--dataset", s(&data), "--preset", "line", "--epochs", "2", "--out", s(&csv)]);
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("encoder,readout,sampler"));
    assert!(lines[1].starts_with("gcn,none,line,inner,jsd"));
    assert!(lines[2].starts_with("lookup,none,line,inner,jsd"));
}

#[test]
fn gen_exec_analyze_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_sbm(dir.path());
    let space = dir.path().join("space.json");
    std::fs::write(
        &space,
        r#"{"encoder":["mlp","gcn"],"readout":["mean"],"sampler":["line","gca"],"emb_dim":[64],"layers":[1,2],"base":{"max_epochs":2}}"#,
    )
    .unwrap();
    let batch = dir.path().join("batch.jsonl");
    ok(&["gen", "--axis", "estimator", "--m", "3", "--space", s(&space), "--dataset", s(&data), "--out", s(&batch)]);
    assert_eq!(std::fs::read_to_string(&batch).unwrap().lines().count(), 6);

    let results = dir.path().join("results.csv");
    let out = ok(&["exec", "--batch", s(&batch), "--out", s(&results), "--workers", "2"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("ran 6"));
    let first = std::fs::read_to_string(&results).unwrap();
    assert_eq!(first.lines().count(), 7);

    let again = ok(&["exec", "--batch", s(&batch), "--out", s(&results), "--workers", "2"]);
    assert!(String::from_utf8_lossy(&again.stderr).contains("ran 0"));
    assert_eq!(std::fs::read_to_string(&results).unwrap(), first);

    let prefix = dir.path().join("an");
    let out = ok(&["analyze", "--results", s(&results), "--out", s(&prefix), "--t", "50"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("jsd") && stdout.contains("infonce"), "{stdout}");
    for suffix in [".ranking.csv", ".single.csv", ".comb.csv", ".leaderboard.csv"] {
        let p = dir.path().join(format!("an{suffix}"));
        assert!(p.exists(), "{suffix} missing");
    }
    let board = std::fs::read_to_string(dir.path().join("an.leaderboard.csv")).unwrap();
    let scores: Vec<f64> = board
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(11).unwrap().parse().unwrap())
        .collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
    assert_eq!(gclab(&["analyze", "--results", s(&results), "--out", s(&prefix), "--t", "100"]).status.code(), Some(1));
}

#[test]
fn exec_resumes_from_partial_results() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_sbm(dir.path());
    let batch = dir.path().join("batch.jsonl");
    let space = dir.path().join("space.json");
    std::fs::write(&space, r#"{"encoder":["mlp"],"sampler":["line"],"emb_dim":[64],"layers":[1],"base":{"max_epochs":1}}"#).unwrap();
    ok(&["gen", "--axis", "readout", "--m", "2", "--space", s(&space), "--out", s(&batch)]);
    let results = dir.path().join("results.csv");
    ok(&["exec", "--batch", s(&batch), "--out", s(&results), "--dataset", s(&data)]);
    let full = std::fs::read_to_string(&results).unwrap();
    let rows: Vec<&str> = full.lines().collect();
    assert_eq!(rows.len(), 5);
    // keep only the first group, as if interrupted
    std::fs::write(&results, rows[..3].join("\n") + "\n").unwrap();
    let out = ok(&["exec", "--batch", s(&batch), "--out", s(&results), "--dataset", s(&data)]);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("ran 2") && stderr.contains("skipped 2"), "{stderr}");
    let strip = |t: &str| -> Vec<String> {
        t.lines()
            .map(|l| {
                let mut f: Vec<&str> = l.split(',').collect();
                f.remove(12);
                f.join(",")
            })
            .collect()
    };
    assert_eq!(strip(&std::fs::read_to_string(&results).unwrap()), strip(&full));
}

#[test]
fn preset_print_and_synth_sizes() {
    let out = ok(&["preset", "graphcl", "--print"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["sampler"]["kind"], "graphcl");
    assert_eq!(v["estimator"], "infonce");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sizes.json");
    let out = ok(&["synth", "--out", s(&path), "--sizes", "5,7", "--per-class", "4"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["graphs"], 8);
    assert_eq!(v["nodes"], 48);
    let run = ok(&["preset", "infograph", "--dataset", s(&path), "--epochs", "1"]);
    let report: serde_json::Value = serde_json::from_slice(&run.stdout).unwrap();
    assert!(report["test_accuracy"].is_number());
}
