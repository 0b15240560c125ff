//! Acceptance suite. Each test prints one `PASS`/`FAIL` line and then asserts.
//! Tests share one lock so the timed criteria are not measured while another
//! criterion competes for the CPU.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use blinkwatch::attention::{self, AnalysisParams};
use blinkwatch::classifier::{train, BlinkModel, Checkpoint, EyeMode, ModelConfig, TrainConfig};
use blinkwatch::evaluation::{self, CropMode, EvalMetrics};
use blinkwatch::eyes::{EyeCrop, EyeSide, Frame, MeanShapeAdapter, CROP_LEN, DEFAULT_PAD};
use blinkwatch::ingest::{EegSample, StreamKind};
use blinkwatch::labeler::{
    self, BlinkCandidate, CandidateStatus, DatasetOptions, DatasetPlan, DatasetSummary, Decision,
    DecisionRecord, LabeledSample, SampleLabel,
};
use blinkwatch::scoring::{self, BlinkEvent, ScoredSample};
use blinkwatch::synth::{self, SyntheticSessionSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

/// Writes straight to the stdout handle so the line shows up even when the
/// test harness captures output.
fn report(name: &str, pass: bool, detail: &str, elapsed: Duration) {
    use std::io::Write;
    let status = if pass { "PASS" } else { "FAIL" };
    let line = format!("{status} {name}: {detail} [{:.2}s]\n", elapsed.as_secs_f64());
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

#[test]
fn counting_arithmetic() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();

    // 3,000 accepted blinks spread over 25 sessions, all three streams.
    let start = Instant::now();
    let mut manifests = Vec::new();
    let mut candidates = Vec::new();
    for s in 0..25u64 {
        let id = format!("s{s:02}");
        let blinks: Vec<f64> = (0..120).map(|k| 3.0 + 5.0 * k as f64).collect();
        let spec = SyntheticSessionSpec {
            streams: StreamKind::ALL.to_vec(),
            ..SyntheticSessionSpec::new(&id, 605.0, blinks, s)
        };
        let session = synth::gen_session(&spec).unwrap();
        for (k, e) in session.events.iter().enumerate() {
            candidates.push(BlinkCandidate {
                candidate_id: format!("{id}_c{:04}", k + 1),
                session_id: id.clone(),
                t_eeg: e.center() / 30.0,
                center_frame: e.center().round() as u64,
                strength: 80.0,
                status: CandidateStatus::Pending,
            });
        }
        manifests.push(session.manifest(&dir.path().join(&id)));
    }
    let decisions: Vec<DecisionRecord> = candidates
        .iter()
        .map(|c| DecisionRecord {
            candidate_id: c.candidate_id.clone(),
            decision: Decision::Accept,
            reviewer: "acceptance".into(),
            decided_at: synth::epoch_timestamp(),
        })
        .collect();
    let plan = labeler::plan_dataset(
        &manifests,
        &candidates,
        &decisions,
        &DatasetOptions::default(),
    )
    .unwrap();
    let math = Instant::now();
    let summary = DatasetSummary::from_samples(&plan.samples);
    let math_time = math.elapsed();
    let big_ok = plan.samples.len() == 6000 && summary.eye_images == 756_000;

    // One sample, one stream, actually written to disk.
    let session_dir = dir.path().join("one");
    let spec = SyntheticSessionSpec::new("one", 3.0, vec![1.5], 1);
    let session = synth::gen_session(&spec).unwrap();
    session.write(&session_dir, true).unwrap();
    let manifest = blinkwatch::ingest::load_session(&session_dir.join("session.json")).unwrap();
    let one = DatasetPlan {
        samples: vec![LabeledSample {
            sample_id: "one_b0001".into(),
            label: SampleLabel::Blink,
            session_id: "one".into(),
            frame_range: (35, 55),
            streams: vec![StreamKind::Rgb],
        }],
        ..DatasetPlan::default()
    };
    let out = dir.path().join("dataset");
    let small = labeler::write_dataset(
        &one,
        &[manifest],
        &out,
        &MeanShapeAdapter::default(),
        DEFAULT_PAD,
    )
    .unwrap();
    let eye_files = walk_count(&out, "_eye_");
    let small_ok = small.eye_images == 42 && eye_files == 42 && small.failed_samples.is_empty();

    let pass = big_ok && small_ok && math_time < Duration::from_secs(1);
    report(
        "counting arithmetic",
        pass,
        &format!(
            "{} samples x 21 x 2 x 3 -> {} eye images; 1 sample x 1 stream -> {} ({} files on disk)",
            plan.samples.len(),
            summary.eye_images,
            small.eye_images,
            eye_files
        ),
        start.elapsed(),
    );
    assert!(pass);
}

fn walk_count(dir: &std::path::Path, needle: &str) -> usize {
    let mut n = 0;
    for e in std::fs::read_dir(dir).unwrap().flatten() {
        let p = e.path();
        if p.is_dir() {
            n += walk_count(&p, needle);
        } else if p.file_name().unwrap().to_string_lossy().contains(needle) {
            n += 1;
        }
    }
    n
}

#[test]
fn blink_duration_bounds() {
    let _g = serial();
    let start = Instant::now();
    let mut events = Vec::new();
    let mut seed = 0;
    while events.len() < 10_000 {
        let spec = SyntheticSessionSpec::coupled(&format!("d{seed}"), 600.0, -0.8, 20.0, seed);
        events.extend(synth::gen_session(&spec).unwrap().events);
        seed += 1;
    }
    let bad = events
        .iter()
        .filter(|e| !(3..=13).contains(&e.duration()))
        .count();
    let min = events.iter().map(|e| e.duration()).min().unwrap();
    let max = events.iter().map(|e| e.duration()).max().unwrap();
    let pass = bad == 0;
    report(
        "blink duration bounds",
        pass,
        &format!(
            "{} events, durations {min}..={max} frames, {bad} out of range",
            events.len()
        ),
        start.elapsed(),
    );
    assert!(pass);
}

#[test]
fn eer_oracle_equivalence() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let total = rng.gen_range(2..=100);
        let n_pos = rng.gen_range(1..total);
        // Coarse values on some instances force ties.
        let levels: u32 = if rng.gen_bool(0.5) { 10 } else { 1_000_000 };
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| f64::from(rng.gen_range(0..=levels)) / f64::from(levels))
                .collect()
        };
        let pos = draw(n_pos);
        let neg = draw(total - n_pos);
        if scoring::calibrate_threshold(&pos, &neg).unwrap()
            != synth::oracle_eer(&pos, &neg).unwrap()
        {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    let pass = mismatches == 0 && elapsed < Duration::from_secs(10);
    report(
        "EER oracle equivalence",
        pass,
        &format!("1000 instances, {mismatches} mismatches"),
        elapsed,
    );
    assert!(pass);
}

#[test]
fn max_aggregation_and_metrics() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut max_bad = 0;
    for _ in 0..10_000 {
        let n = rng.gen_range(1..=50);
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mut brute = v[0];
        for &x in &v {
            if x > brute {
                brute = x;
            }
        }
        if scoring::score_sample(&v).unwrap() != brute {
            max_bad += 1;
        }
    }

    let mut metric_bad = 0;
    let mut zero_cases = 0;
    for i in 0..100 {
        let (tp, fp, fn_, tn) = match i {
            0 => (0, 0, 0, 0),
            1 => (0, 0, 7, 3),
            2 => (0, 5, 0, 2),
            3 => (4, 0, 0, 0),
            _ => (
                rng.gen_range(0..60),
                rng.gen_range(0..60),
                rng.gen_range(0..60),
                rng.gen_range(0..60),
            ),
        };
        let recall = if tp + fn_ == 0 {
            0.0
        } else {
            tp as f64 / (tp + fn_) as f64
        };
        let precision = if tp + fp == 0 {
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let f1 = if 2 * tp + fp + fn_ == 0 {
            0.0
        } else {
            2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
        };
        if tp + fn_ == 0 || tp + fp == 0 {
            zero_cases += 1;
        }
        let m = EvalMetrics::from_counts(EyeSide::Left, tp, fp, fn_, tn);
        if (m.recall - recall).abs() > 1e-4
            || (m.precision - precision).abs() > 1e-4
            || (m.f1 - f1).abs() > 1e-4
        {
            metric_bad += 1;
        }
    }
    let elapsed = start.elapsed();
    let pass = max_bad == 0 && metric_bad == 0 && elapsed < Duration::from_secs(10);
    report(
        "max aggregation and metrics",
        pass,
        &format!("10000 lists ({max_bad} wrong); 100 confusion counts incl. {zero_cases} zero-denominator ({metric_bad} wrong)"),
        elapsed,
    );
    assert!(pass);
}

#[test]
fn end_to_end_synthetic_detection() {
    let _g = serial();
    let start = Instant::now();
    let items = synth::training_crops(2000, 21);
    let cfg = TrainConfig {
        epochs: 6,
        early_stop_patience: 2,
        seed: 21,
        ..TrainConfig::default()
    };
    let outcome = train(&items, ModelConfig::default(), &cfg).unwrap();
    let model = &outcome.checkpoint.model;
    let trained = start.elapsed();

    // Threshold from a calibration split that shares nothing with the test split.
    let calibration = synth::bench_set(40, 40, 901);
    let scored: Vec<ScoredSample> = calibration
        .iter()
        .map(|s| evaluation::score_frames(model, &s.sample_id, &s.crops, Some(s.label)).unwrap())
        .collect();
    let threshold = scoring::calibrate_samples(&scored, "synthetic-calibration").unwrap();

    let dir = tempfile::tempdir().unwrap();
    synth::write_bench(dir.path(), &synth::bench_set(100, 100, 902)).unwrap();
    let bench = evaluation::load_benchmark(dir.path()).unwrap();
    let result = evaluation::evaluate(
        &bench.samples,
        model,
        threshold.threshold,
        CropMode::WholeImage,
    )
    .unwrap();
    let elapsed = start.elapsed();

    let [left, right] = [&result.metrics[0], &result.metrics[1]];
    let pass = bench.malformed.is_empty()
        && result.skipped.is_empty()
        && left.f1 >= 0.95
        && right.f1 >= 0.95
        && elapsed <= Duration::from_secs(300);
    report(
        "end-to-end synthetic detection",
        pass,
        &format!(
            "{} epochs in {:.0}s, threshold {:.4} (EER fpr {:.3} fnr {:.3}); test F1 left {:.4} right {:.4} over {} samples",
            outcome.checkpoint.history.len(),
            trained.as_secs_f64(),
            threshold.threshold,
            threshold.fpr,
            threshold.fnr,
            left.f1,
            right.f1,
            bench.samples.len()
        ),
        elapsed,
    );
    assert!(pass);
}

#[test]
fn candidate_recovery() {
    let _g = serial();
    let start = Instant::now();
    let (mut found, mut total) = (0, 0);
    for seed in 0..20u64 {
        let id = format!("r{seed:02}");
        let spec = SyntheticSessionSpec::coupled(&id, 300.0, -0.8, 20.0, 500 + seed);
        let session = synth::gen_session(&spec).unwrap();
        let candidates =
            labeler::extract_candidates(&id, &session.eeg, spec.fps, labeler::DEFAULT_QUANTILE)
                .unwrap();
        for e in &session.events {
            total += 1;
            if candidates
                .iter()
                .any(|c| (c.center_frame as f64 - e.center()).abs() <= 15.0)
            {
                found += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    let rate = found as f64 / total as f64;
    let pass = rate >= 0.95 && elapsed < Duration::from_secs(30);
    report(
        "candidate recovery",
        pass,
        &format!(
            "{found}/{total} events recovered ({:.1}%) over 20 sessions",
            100.0 * rate
        ),
        elapsed,
    );
    assert!(pass);
}

#[test]
fn bpm_oracle_equivalence() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let duration = rng.gen_range(5.0..120.0_f64).round();
        let frames = (duration * 30.0) as u64;
        let n = rng.gen_range(0..30);
        let events: Vec<BlinkEvent> = (0..n)
            .map(|_| {
                let s = rng.gen_range(0..frames);
                BlinkEvent {
                    start_frame: s,
                    end_frame: (s + rng.gen_range(0..13)).min(frames - 1),
                    peak_score: 1.0,
                    long_closure: false,
                }
            })
            .collect();
        let window = [5.0, 10.0, 20.0][rng.gen_range(0..3)];
        let slide = [1.0, 2.5, 5.0][rng.gen_range(0..3)];
        let duration = duration.max(window);
        let got = attention::blink_rate_series(&events, 30.0, window, slide, duration).unwrap();
        if got != synth::oracle_bpm(&events, 30.0, window, slide, duration) {
            mismatches += 1;
        }
    }
    let one = BlinkEvent {
        start_frame: 60,
        end_frame: 65,
        peak_score: 1.0,
        long_closure: false,
    };
    let single = attention::blink_rate_series(&[one], 30.0, 5.0, 5.0, 5.0).unwrap();
    let elapsed = start.elapsed();
    let pass = mismatches == 0 && single.values == vec![12.0] && elapsed < Duration::from_secs(10);
    report(
        "bpm oracle equivalence",
        pass,
        &format!(
            "1000 event sets, {mismatches} mismatches; one blink in 5 s -> {:?} bpm",
            single.values
        ),
        elapsed,
    );
    assert!(pass);
}

#[test]
fn attention_windowing() {
    let _g = serial();
    let start = Instant::now();
    let eeg: Vec<EegSample> = (0..240)
        .map(|t| EegSample {
            t: f64::from(t),
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
            delta: 0.0,
            theta: 0.0,
            blink_strength: 0.0,
            attention: 63.0,
        })
        .collect();
    let series = attention::attention_series(&eeg, 20.0, 5.0).unwrap();
    let pass = series.len() == 45 && series.values.iter().all(|&v| v == 63.0);
    report(
        "attention windowing",
        pass,
        &format!(
            "240 s constant trace -> {} points, all equal: {}",
            series.len(),
            series.values.iter().all(|&v| v == 63.0)
        ),
        start.elapsed(),
    );
    assert!(pass);
}

#[test]
fn correlation_recovery() {
    let _g = serial();
    let start = Instant::now();
    // A narrow network keeps 20 sessions of full-frame scoring inside the budget.
    let small = ModelConfig {
        conv_filters: vec![4, 4, 8],
        dense_units: 8,
        ..ModelConfig::default()
    };
    let cfg = TrainConfig {
        epochs: 8,
        seed: 3,
        ..TrainConfig::default()
    };
    let model = train(&synth::training_crops(600, 3), small, &cfg)
        .unwrap()
        .checkpoint
        .model;
    let calibration = synth::bench_set(20, 20, 903);
    let scored: Vec<ScoredSample> = calibration
        .iter()
        .map(|s| evaluation::score_frames(&model, &s.sample_id, &s.crops, Some(s.label)).unwrap())
        .collect();
    let threshold = scoring::calibrate_samples(&scored, "synthetic-calibration")
        .unwrap()
        .threshold;

    let adapter = MeanShapeAdapter::default();
    let params = AnalysisParams::default();
    let mut rs = Vec::new();
    for seed in 0..20u64 {
        let id = format!("c{seed:02}");
        let mut spec = SyntheticSessionSpec::coupled(&id, 120.0, -0.8, 18.0, 700 + seed);
        spec.resolution = (160, 120);
        let session = synth::gen_session(&spec).unwrap();
        let frames = attention::score_frames_with(
            session.frame_count,
            |f| Ok(Frame::from_image(session.render_frame(f))),
            &model,
            &adapter,
            DEFAULT_PAD,
        )
        .unwrap();
        let candidates =
            labeler::extract_candidates(&id, &session.eeg, spec.fps, labeler::DEFAULT_QUANTILE)
                .unwrap();
        let decisions = synth::simulate_review(
            &candidates,
            &session.events,
            15.0,
            "sim",
            synth::epoch_timestamp(),
        );
        let (reviewed, _) = labeler::apply_decisions(&candidates, &decisions);
        let truth = attention::candidate_events(&reviewed);
        let analysis = attention::analyze_session(
            &id,
            &session.eeg,
            &frames,
            spec.fps,
            &truth,
            threshold,
            &params,
        )
        .unwrap();
        rs.push(analysis.correlation.r.unwrap_or(f64::NAN));
    }
    let elapsed = start.elapsed();
    let hits = rs.iter().filter(|&&r| r <= -0.5).count();
    let pass = hits >= 18 && elapsed < Duration::from_secs(120);
    let shown: Vec<String> = rs.iter().map(|r| format!("{r:.2}")).collect();
    report(
        "correlation recovery",
        pass,
        &format!("r <= -0.5 in {hits}/20 sessions [{}]", shown.join(", ")),
        elapsed,
    );
    assert!(pass);
}

#[test]
fn report_fidelity() {
    let _g = serial();
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("baselines.csv");
    std::fs::write(
        &path,
        "method,eye,recall,precision,f1\nOurs,Left,0.9603,0.6080,0.7446\nOurs,Right,0.7950,0.7348,0.7637\n",
    )
    .unwrap();
    let baselines = evaluation::read_baselines(&path).unwrap();
    let rep = evaluation::render_report(&[], &baselines);
    let expected = "\
Method | Eye   | Recall | Precision | F1     | Source
-------+-------+--------+-----------+--------+---------
Ours   | Left  | 0.9603 | 0.6080    | 0.7446 | baseline
Ours   | Right | 0.7950 | 0.7348    | 0.7637 | baseline
";
    let pass = rep.text == expected && rep.warnings.is_empty();
    report(
        "report fidelity",
        pass,
        "baseline rows rendered byte-exact",
        start.elapsed(),
    );
    if !pass {
        println!("{}", rep.text);
    }
    assert!(pass);
}

#[test]
fn checkpoint_round_trip() {
    let _g = serial();
    let start = Instant::now();
    let model = BlinkModel::build(ModelConfig::default(), EyeMode::Shared, 17).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let crops: Vec<EyeCrop> = (0..100)
        .map(|i| {
            let side = if i % 2 == 0 {
                EyeSide::Left
            } else {
                EyeSide::Right
            };
            EyeCrop::new(
                side,
                (0..CROP_LEN).map(|_| rng.gen_range(0.0..=1.0)).collect(),
                None,
            )
            .unwrap()
        })
        .collect();
    let before = model.predict(&crops).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.tar");
    Checkpoint::untrained(model, TrainConfig::default())
        .save(&path)
        .unwrap();
    let after = Checkpoint::load(&path)
        .unwrap()
        .model
        .predict(&crops)
        .unwrap();
    let worst = before
        .iter()
        .zip(&after)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let pass = worst <= 1e-6;
    report(
        "checkpoint round-trip",
        pass,
        &format!("100 crops, max |diff| {worst:.2e}"),
        start.elapsed(),
    );
    assert!(pass);
}
