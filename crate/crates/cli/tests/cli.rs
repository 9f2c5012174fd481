//! Drives the `vbpsim` binary against the bundled data files.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn vbpsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vbpsim"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn validate_exit_codes() {
    let ok = vbpsim(&["validate", path(&data("lots.json"))]);
    assert_eq!(ok.status.code(), Some(0), "{}", text(&ok.stderr));
    assert!(text(&ok.stdout).contains("5 scenarios valid"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(
        &bad,
        r#"{"scenarios": [{"drug_id": "overshare", "p_max": 1.0, "rho": 0.6, "x": 1, "q0": 100, "qe": 150,
            "firms": [{"firm_id": "F1", "omega": 0.5, "type": "B", "raw_material": false, "beta": 0.9},
                      {"firm_id": "F2", "omega": 1.0, "type": "A", "raw_material": true, "beta": 0.6}]}]}"#,
    )
    .unwrap();
    let invalid = vbpsim(&["validate", path(&bad)]);
    assert_eq!(invalid.status.code(), Some(1));
    assert!(text(&invalid.stderr).contains("overshare"), "{}", text(&invalid.stderr));

    let missing = vbpsim(&["validate", path(&dir.path().join("absent.json"))]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(vbpsim(&["run"]).status.code(), Some(2));
    assert_eq!(vbpsim(&["frobnicate"]).status.code(), Some(2));
    let out = vbpsim(&["sweep", "--scenarios", path(&data("lots.json")), "--target", "rho", "--multipliers", ""]);
    assert_eq!(out.status.code(), Some(2));
    let out = vbpsim(&["sweep", "--scenarios", path(&data("lots.json")), "--target", "rho"]);
    assert_eq!(out.status.code(), Some(2));
    let out = vbpsim(&["metrics", "--run-dir", "/nonexistent/run"]);
    assert_eq!(out.status.code(), Some(2));
}

fn rule_run(out: &Path) -> Output {
    vbpsim(&[
        "run",
        "--scenarios",
        path(&data("lots.json")),
        "--algorithms",
        "rule",
        "--episodes",
        "3",
        "--timesteps",
        "10",
        "--batch-id",
        "cli",
        "--seed",
        "4",
        "--out",
        path(out),
    ])
}

fn final_strategies(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut found = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() == "final_strategy.csv" {
                found.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    found.sort();
    found
}

#[test]
fn rule_run_writes_reproducible_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let first = rule_run(&a);
    assert_eq!(first.status.code(), Some(0), "{}", text(&first.stderr));
    assert!(text(&first.stdout).contains("5 tasks, 0 failed"));
    assert_eq!(rule_run(&b).status.code(), Some(0));
    let fa = final_strategies(&a);
    assert_eq!(fa.len(), 5);
    assert_eq!(fa, final_strategies(&b));
    let task = a.join("cli/adefovir/rule/base");
    for f in ["training_stats.csv", "evaluation.csv", "run_meta.json"] {
        assert!(task.join(f).exists(), "{f}");
    }
    let stats = fs::read_to_string(task.join("training_stats.csv")).unwrap();
    assert_eq!(stats.lines().count(), 4);

    let metrics = vbpsim(&["metrics", "--run-dir", path(&a)]);
    assert_eq!(metrics.status.code(), Some(0), "{}", text(&metrics.stderr));
    let summary = fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert!(summary.starts_with("drug_id,algorithm,n_firms,mean_price,mean_profit"));
    assert_eq!(summary.lines().count(), 1 + 5 + 1);

    let reference = dir.path().join("reference.csv");
    let mut csv = String::from("drug_id,firm_id,actual_price,actual_winner\n");
    for (rel, bytes) in &fa {
        let drug = rel.components().nth(1).unwrap().as_os_str().to_str().unwrap();
        for line in text(bytes).lines().skip(1) {
            let cols: Vec<&str> = line.split(',').collect();
            csv.push_str(&format!("{drug},{},{},{}\n", cols[0], cols[2], u8::from(cols[4] == "true")));
        }
    }
    fs::write(&reference, csv).unwrap();
    let scored_dir = dir.path().join("scored");
    let scored = vbpsim(&["metrics", "--run-dir", path(&a), "--reference", path(&reference), "--out", path(&scored_dir)]);
    assert_eq!(scored.status.code(), Some(0), "{}", text(&scored.stderr));
    let rows = fs::read_to_string(scored_dir.join("metrics.csv")).unwrap();
    assert!(rows.starts_with("drug_id,algorithm,spearman,p,r2,alignment"));
    let pooled = rows.lines().find(|l| l.starts_with("ALL,")).unwrap();
    assert!(pooled.contains(",1.0,1.0,") || pooled.contains(",1,1,"), "{pooled}");

    let missing_ref = vbpsim(&["metrics", "--run-dir", path(&a), "--reference", path(&dir.path().join("nope.csv"))]);
    assert_eq!(missing_ref.status.code(), Some(2));
}

#[test]
fn scripted_llm_run_records_transcripts() {
    let dir = tempfile::tempdir().unwrap();
    let out = vbpsim(&[
        "run",
        "--config",
        path(&data("llm_mock.toml")),
        "--out",
        path(dir.path()),
        "--batch-id",
        "llm",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let task = dir.path().join("llm/adefovir/llm/base");
    let transcripts: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(task.join("transcripts.json")).unwrap()).unwrap();
    assert_eq!(transcripts.as_array().unwrap().len(), (1 + 5) * 50 * 3);
    let stats = fs::read_to_string(task.join("constraint_stats.csv")).unwrap();
    let row = stats.lines().nth(1).unwrap();
    assert!(row.starts_with("llm,150,2,"), "{stats}");
}

#[test]
fn sweep_writes_one_row_per_multiplier_on_every_axis() {
    let dir = tempfile::tempdir().unwrap();
    for target in ["rho", "p_max", "q0", "qe", "cost"] {
        let out = vbpsim(&[
            "sweep",
            "--scenarios",
            path(&data("lots.json")),
            "--drugs",
            "adefovir",
            "--algorithms",
            "rule,ippo",
            "--episodes",
            "2",
            "--timesteps",
            "5",
            "--target",
            target,
            "--multipliers",
            "0.9,1.0,1.1",
            "--seeds",
            "2",
            "--batch-id",
            "sw",
            "--out",
            path(dir.path()),
        ]);
        assert_eq!(out.status.code(), Some(0), "{target}: {}", text(&out.stderr));
        let csv = fs::read_to_string(dir.path().join(format!("sw/sweep_{target}.csv"))).unwrap();
        let rows: Vec<&str> = csv.lines().skip(1).collect();
        assert_eq!(rows.len(), 6, "{target}");
        assert_eq!(rows.iter().filter(|r| r.starts_with("adefovir,rule,")).count(), 3);
        assert_eq!(rows.iter().filter(|r| r.starts_with("adefovir,ippo,")).count(), 3);
    }
}
