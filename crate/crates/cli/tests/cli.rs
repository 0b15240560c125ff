use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;

use blinkwatch::labeler::{self, Decision, DecisionRecord};
use blinkwatch::synth;
use blinkwatch_cli::{run, EXIT_DOMAIN, EXIT_OK, EXIT_USAGE};

fn cli(args: &[&str]) -> i32 {
    run(std::iter::once("blinkwatch").chain(args.iter().copied()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn unknown_subcommand_exits_with_usage_code() {
    let out = Command::new(env!("CARGO_BIN_EXE_blinkwatch"))
        .arg("frobnicate")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_USAGE));
    assert_eq!(cli(&["frobnicate"]), EXIT_USAGE);
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(cli(&["--help"]), EXIT_OK);
    assert_eq!(cli(&["--version"]), EXIT_OK);
}

#[test]
fn bad_argument_values_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    assert_eq!(
        cli(&[
            "synth",
            "session",
            "--output",
            p(&out),
            "--streams",
            "thermal"
        ]),
        EXIT_USAGE
    );
    assert_eq!(cli(&["train", "--output", p(&out)]), EXIT_USAGE);
    assert_eq!(
        cli(&[
            "extract-candidates",
            "--session",
            p(&out),
            "--output",
            "x",
            "--quantile",
            "1.5"
        ]),
        EXIT_USAGE
    );
}

#[test]
fn domain_errors_exit_one_and_are_logged() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("run.json");
    let code = cli(&[
        "--run-log",
        p(&log),
        "extract-candidates",
        "--session",
        p(&dir.path().join("missing")),
        "--output",
        p(&dir.path().join("c.csv")),
    ]);
    assert_eq!(code, EXIT_DOMAIN);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&log).unwrap()).unwrap();
    assert_eq!(v["command"], "extract-candidates");
    assert_eq!(v["exit_code"], 1);
    assert!(v["error"].as_str().unwrap().contains("missing"));
}

#[test]
fn synth_session_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run_once = |name: &str| {
        let out = dir.path().join(name);
        let log = dir.path().join(format!("{name}.json"));
        let code = cli(&[
            "--run-log",
            p(&log),
            "synth",
            "session",
            "--blinks",
            "20",
            "--duration",
            "240",
            "--seed",
            "7",
            "--width",
            "96",
            "--height",
            "72",
            "--output",
            p(&out),
        ]);
        assert_eq!(code, EXIT_OK);
        let v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&log).unwrap()).unwrap();
        assert_eq!(v["seeds"]["session"], 7);
        assert_eq!(v["versions"]["checkpoint_format"], "1.0");
        tree(&out)
    };
    let a = run_once("a");
    let b = run_once("b");
    assert!(
        a.len() > 7200,
        "expected frames plus metadata, got {}",
        a.len()
    );
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (name, bytes) in &a {
        assert!(bytes == &b[name], "{name} differs between runs");
    }
    let gt = synth::read_ground_truth(&dir.path().join("a/ground_truth.csv")).unwrap();
    assert_eq!(gt.len(), 20);
}

#[test]
fn evaluate_writes_metrics_and_table() {
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| dir.path().join(n);
    assert_eq!(
        cli(&[
            "synth",
            "bench",
            "--blinks",
            "8",
            "--no-blinks",
            "8",
            "--seed",
            "3",
            "--output",
            p(&d("cal"))
        ]),
        EXIT_OK
    );
    assert_eq!(
        cli(&[
            "synth",
            "bench",
            "--blinks",
            "8",
            "--no-blinks",
            "8",
            "--seed",
            "4",
            "--output",
            p(&d("test"))
        ]),
        EXIT_OK
    );
    assert_eq!(
        cli(&[
            "synth",
            "eyes",
            "--count",
            "300",
            "--seed",
            "5",
            "--output",
            p(&d("eyes"))
        ]),
        EXIT_OK
    );
    assert_eq!(
        cli(&[
            "train",
            "--crops",
            p(&d("eyes")),
            "--epochs",
            "4",
            "--conv-filters",
            "4,4,8",
            "--dense-units",
            "8",
            "--seed",
            "1",
            "--output",
            p(&d("model.ckpt")),
        ]),
        EXIT_OK
    );
    assert_eq!(
        cli(&[
            "calibrate",
            "--checkpoint",
            p(&d("model.ckpt")),
            "--bench",
            p(&d("cal")),
            "--output",
            p(&d("thr.json")),
            "--scores-out",
            p(&d("scores.csv")),
        ]),
        EXIT_OK
    );
    // Recalibrating from the written scores gives the same threshold.
    assert_eq!(
        cli(&[
            "calibrate",
            "--scores",
            p(&d("scores.csv")),
            "--output",
            p(&d("thr2.json"))
        ]),
        EXIT_OK
    );
    let t1: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d("thr.json")).unwrap()).unwrap();
    let t2: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d("thr2.json")).unwrap()).unwrap();
    assert_eq!(t1["threshold"], t2["threshold"]);
    assert_eq!(t1["n_pos"], 16);

    fs::write(
        d("baselines.csv"),
        "method,eye,recall,precision,f1\nPrior,Left,0.9,0.8,0.847059\n",
    )
    .unwrap();
    assert_eq!(
        cli(&[
            "evaluate",
            "--bench",
            p(&d("test")),
            "--checkpoint",
            p(&d("model.ckpt")),
            "--threshold-report",
            p(&d("thr.json")),
            "--baselines",
            p(&d("baselines.csv")),
            "--output",
            p(&d("eval")),
        ]),
        EXIT_OK
    );
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d("eval/metrics.json")).unwrap()).unwrap();
    let rows = metrics["metrics"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    for (row, side) in rows.iter().zip(["left", "right"]) {
        assert_eq!(row["eye_side"], side);
        let n = ["tp", "fp", "fn", "tn"]
            .iter()
            .map(|k| row[k].as_u64().unwrap())
            .sum::<u64>();
        assert_eq!(n, 16);
    }
    let table = fs::read_to_string(d("eval/report.txt")).unwrap();
    assert!(table.lines().next().unwrap().starts_with("Method"));
    assert!(table.contains("Prior"));
    assert_eq!(table.matches("Ours").count(), 2);
    assert!(d("eval/report.json").is_file());
}

#[test]
fn per_eye_checkpoints_cover_both_sides() {
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| dir.path().join(n);
    assert_eq!(
        cli(&[
            "train",
            "--synthetic-crops",
            "200",
            "--epochs",
            "2",
            "--conv-filters",
            "4,4,8",
            "--dense-units",
            "8",
            "--per-eye",
            "--output",
            p(&d("m.ckpt")),
        ]),
        EXIT_OK
    );
    assert!(d("m.left.ckpt").is_file() && d("m.right.ckpt").is_file());
    assert_eq!(
        cli(&[
            "synth",
            "bench",
            "--blinks",
            "3",
            "--no-blinks",
            "3",
            "--output",
            p(&d("b"))
        ]),
        EXIT_OK
    );
    assert_eq!(
        cli(&[
            "calibrate",
            "--checkpoint",
            p(&d("m.left.ckpt")),
            "--checkpoint",
            p(&d("m.right.ckpt")),
            "--bench",
            p(&d("b")),
            "--output",
            p(&d("t.json")),
        ]),
        EXIT_OK
    );
    let t: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d("t.json")).unwrap()).unwrap();
    assert_eq!(t["n_pos"], 6);
    assert_eq!(t["n_neg"], 6);
}

#[test]
fn candidates_to_dataset_to_attention_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| dir.path().join(n);
    assert_eq!(
        cli(&[
            "synth",
            "session",
            "--session-id",
            "s1",
            "--blinks",
            "6",
            "--duration",
            "40",
            "--seed",
            "2",
            "--width",
            "160",
            "--height",
            "120",
            "--output",
            p(&d("s1")),
        ]),
        EXIT_OK
    );
    assert_eq!(
        cli(&[
            "extract-candidates",
            "--session",
            p(&d("s1")),
            "--output",
            p(&d("c.csv"))
        ]),
        EXIT_OK
    );
    let candidates = labeler::read_candidates(&d("c.csv")).unwrap();
    assert!(!candidates.is_empty());
    let gt = synth::read_ground_truth(&d("s1/ground_truth.csv")).unwrap();
    let decisions: Vec<DecisionRecord> =
        synth::simulate_review(&candidates, &gt, 15.0, "tester", synth::epoch_timestamp());
    let accepted = decisions
        .iter()
        .filter(|r| r.decision == Decision::Accept)
        .count();
    assert_eq!(accepted, 6);
    labeler::append_decisions(&d("dec.csv"), &decisions).unwrap();

    assert_eq!(
        cli(&[
            "build-dataset",
            "--session",
            p(&d("s1")),
            "--candidates",
            p(&d("c.csv")),
            "--decisions",
            p(&d("dec.csv")),
            "--seed",
            "9",
            "--output",
            p(&d("ds")),
        ]),
        EXIT_OK
    );
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d("ds/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["blink_samples"], 6);
    assert_eq!(summary["no_blink_samples"], 6);
    assert_eq!(summary["eye_images"], 12 * 21 * 2);

    assert_eq!(
        cli(&[
            "train",
            "--dataset",
            p(&d("ds")),
            "--epochs",
            "2",
            "--conv-filters",
            "4,4,8",
            "--dense-units",
            "8",
            "--val-fraction",
            "0",
            "--output",
            p(&d("m.ckpt")),
        ]),
        EXIT_OK
    );
    fs::write(
        d("thr.json"),
        r#"{"threshold":0.5,"fpr":0.0,"fnr":0.0,"n_pos":1,"n_neg":1,"calibration_split":"fixed"}"#,
    )
    .unwrap();
    assert_eq!(
        cli(&[
            "attention-report",
            "--session",
            p(&d("s1")),
            "--checkpoint",
            p(&d("m.ckpt")),
            "--threshold-report",
            p(&d("thr.json")),
            "--candidates",
            p(&d("c.csv")),
            "--decisions",
            p(&d("dec.csv")),
            "--output",
            p(&d("att")),
        ]),
        EXIT_OK
    );
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d("att/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["sessions"][0]["ground_truth_events"], 6);
    assert!(d("att/s1.csv").is_file() && d("att/attention.png").is_file());
}
