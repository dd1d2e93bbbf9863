use std::path::Path;
use std::process::{Command, Output};

fn plausrank(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_plausrank")).args(args).current_dir(dir).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = plausrank(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn analyze_writes_histograms_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--mode", "separable", "--premises", "40", "--seed", "1", "--out", "corpus.jsonl"]);
    ok(d, &["recast", "--input", "corpus.jsonl", "--variant", "mnli1", "--out", "trip.jsonl", "--sets-out", "sets.jsonl"]);
    ok(d, &[
        "train", "--triplets", "trip.jsonl", "--dev", "trip.jsonl", "--objective", "log", "--out-dir", "run",
        "--max-epochs", "2", "--dim", "8", "--hidden", "8",
    ]);
    let summary = ok(d, &["analyze", "--checkpoint", "run/model.ckpt", "--sets", "sets.jsonl", "--bins", "10", "--out-dir", "an", "--svg"]);
    assert!(summary.starts_with("metric,value\n"));
    assert!(summary.contains("middle_mass_level_1,"));

    let hist = std::fs::read_to_string(d.join("an/histogram.csv")).unwrap();
    let mut lines = hist.lines();
    assert_eq!(lines.next(), Some("gold_level,bin_lo,bin_hi,count"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3 * 10);
    // every premise contributes one probability per gold level
    for level in ["0", "1", "2"] {
        let total: u64 = rows.iter().filter(|r| r[0] == level).map(|r| r[3].parse::<u64>().unwrap()).sum();
        assert_eq!(total, 40);
    }
    assert!(std::fs::read_to_string(d.join("an/histogram.svg")).unwrap().starts_with("<svg"));
    assert!(d.join("an/manifest.json").exists());
}

#[test]
fn crossval_reports_best_xi() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--mode", "separable", "--premises", "30", "--seed", "2", "--out", "corpus.jsonl"]);
    ok(d, &["recast", "--input", "corpus.jsonl", "--variant", "mnli1", "--out", "trip.jsonl"]);
    std::fs::write(d.join("cfg.json"), r#"{"max_epochs": 2, "dim": 8, "hidden": 8}"#).unwrap();
    let out = ok(d, &[
        "crossval", "--triplets", "trip.jsonl", "--k", "3", "--grid", "0.1,1.0", "--seed", "4", "--config", "cfg.json",
    ]);
    let last = out.lines().last().unwrap();
    let best: f64 = last.strip_prefix("best_xi,").unwrap().parse().unwrap();
    assert!(best == 0.1 || best == 1.0);
    assert!(out.starts_with("xi,fold,dev_accuracy\n"));
    assert_eq!(out.lines().filter(|l| l.starts_with("0.1,") && !l.starts_with("0.1,mean")).count(), 3);
    assert!(d.join("crossval-manifest.json").exists());
}

#[test]
fn gradcheck_passes_and_fails_by_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let pass = ok(d, &["gradcheck", "--draws", "3"]);
    assert!(pass.lines().last().unwrap().starts_with("PASS"));
    assert_eq!(pass.lines().count(), 1 + 6 + 1);

    // an impossible threshold must fail with the numeric exit code
    let fail = plausrank(d, &["gradcheck", "--draws", "2", "--threshold", "1e-300"]);
    assert_eq!(fail.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&fail.stdout).lines().last().unwrap().starts_with("FAIL"));
}

#[test]
fn bad_inputs_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let missing = plausrank(d, &["eval", "--checkpoint", "nope.ckpt", "--triplets", "nope.jsonl"]);
    assert!(!missing.status.success());
    assert!(!missing.stderr.is_empty());
    let usage = plausrank(d, &["train"]);
    assert_eq!(usage.status.code(), Some(1));
    let zero = plausrank(d, &["gradcheck", "--threshold", "0"]);
    assert_eq!(zero.status.code(), Some(1));
}
