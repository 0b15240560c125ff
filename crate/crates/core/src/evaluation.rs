//! Per-eye benchmark evaluation and the comparison table.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::classifier::{BlinkModel, ClassifierError};
use crate::eyes::{self, EyeCrop, EyeError, EyeSide, Frame, LandmarkAdapter};
use crate::labeler::SampleLabel;
use crate::scoring::{classify_sample, ScoreError, ScoredSample};

pub const BENCH_FRAME_COUNT: usize = 13;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("benchmark root {0} is not a directory")]
    MissingRoot(PathBuf),
    #[error("malformed baselines file: {0}")]
    MalformedBaselines(String),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSample {
    pub sample_id: String,
    pub eye_side: EyeSide,
    pub frames: Vec<PathBuf>,
    pub label: SampleLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MalformedSample {
    pub sample_id: String,
    pub eye_side: Option<EyeSide>,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    pub samples: Vec<BenchmarkSample>,
    pub malformed: Vec<MalformedSample>,
}

impl Benchmark {
    /// Sample count per (label, eye).
    pub fn counts(&self) -> BTreeMap<(SampleLabel, EyeSide), usize> {
        let mut m = BTreeMap::new();
        for s in &self.samples {
            *m.entry((s.label, s.eye_side)).or_insert(0) += 1;
        }
        m
    }
}

fn sorted_dirs(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    v.sort();
    Ok(v)
}

fn name_of(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Reads `<root>/{blink|no_blink}/<sample_id>/<eye_side>/%02d.png`. When
/// `<root>/labels.csv` (`sample_id,label`) exists, samples whose directory
/// disagrees with it are reported as malformed. Samples without exactly
/// frames 00–12 are reported and skipped.
pub fn load_benchmark(root: &Path) -> Result<Benchmark, EvalError> {
    if !root.is_dir() {
        return Err(EvalError::MissingRoot(root.to_path_buf()));
    }
    let mut declared: BTreeMap<String, String> = BTreeMap::new();
    let labels_path = root.join("labels.csv");
    if labels_path.is_file() {
        let mut reader = csv::Reader::from_path(&labels_path)?;
        for rec in reader.records() {
            let rec = rec?;
            if rec.len() >= 2 {
                declared.insert(rec[0].trim().to_string(), rec[1].trim().to_string());
            }
        }
    }

    let mut bench = Benchmark::default();
    for label in [SampleLabel::Blink, SampleLabel::NoBlink] {
        let class_dir = root.join(label.as_str());
        if !class_dir.is_dir() {
            continue;
        }
        for sample_dir in sorted_dirs(&class_dir)? {
            let sample_id = name_of(&sample_dir);
            if let Some(d) = declared.get(&sample_id) {
                if d != label.as_str() {
                    bench.malformed.push(MalformedSample {
                        sample_id: sample_id.clone(),
                        eye_side: None,
                        reason: format!(
                            "labels.csv says `{d}` but sample is under {}",
                            label.as_str()
                        ),
                    });
                    continue;
                }
            }
            for eye_dir in sorted_dirs(&sample_dir)? {
                let Some(eye_side) = EyeSide::parse(&name_of(&eye_dir)) else {
                    bench.malformed.push(MalformedSample {
                        sample_id: sample_id.clone(),
                        eye_side: None,
                        reason: format!("unknown eye directory `{}`", name_of(&eye_dir)),
                    });
                    continue;
                };
                let pngs = fs::read_dir(&eye_dir)?
                    .filter_map(|e| e.ok())
                    .filter(|e| e.path().extension().is_some_and(|x| x == "png"))
                    .count();
                let frames: Vec<PathBuf> = (0..BENCH_FRAME_COUNT)
                    .map(|k| eye_dir.join(format!("{k:02}.png")))
                    .collect();
                if pngs != BENCH_FRAME_COUNT || !frames.iter().all(|f| f.is_file()) {
                    log::warn!("skipping {sample_id}/{eye_side}: {pngs} frames");
                    bench.malformed.push(MalformedSample {
                        sample_id: sample_id.clone(),
                        eye_side: Some(eye_side),
                        reason: format!("expected frames 00-12, found {pngs} png files"),
                    });
                    continue;
                }
                bench.samples.push(BenchmarkSample {
                    sample_id: sample_id.clone(),
                    eye_side,
                    frames,
                    label,
                });
            }
        }
    }
    Ok(bench)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub eye_side: EyeSide,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    ratio(2.0 * precision * recall, precision + recall)
}

impl EvalMetrics {
    /// Metrics from a confusion matrix; any zero denominator yields 0.
    pub fn from_counts(eye_side: EyeSide, tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let recall = ratio(tp as f64, (tp + fn_) as f64);
        let precision = ratio(tp as f64, (tp + fp) as f64);
        Self {
            eye_side,
            tp,
            fp,
            fn_,
            tn,
            recall,
            precision,
            f1: f1_score(precision, recall),
        }
    }

    /// Counts `(truth, predicted)` pairs.
    pub fn from_predictions(
        eye_side: EyeSide,
        pairs: impl IntoIterator<Item = (SampleLabel, SampleLabel)>,
    ) -> Self {
        let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
        for (truth, pred) in pairs {
            match (truth, pred) {
                (SampleLabel::Blink, SampleLabel::Blink) => tp += 1,
                (SampleLabel::NoBlink, SampleLabel::Blink) => fp += 1,
                (SampleLabel::Blink, SampleLabel::NoBlink) => fn_ += 1,
                (SampleLabel::NoBlink, SampleLabel::NoBlink) => tn += 1,
            }
        }
        Self::from_counts(eye_side, tp, fp, fn_, tn)
    }
}

/// How benchmark frames become classifier crops.
#[derive(Clone, Copy)]
pub enum CropMode<'a> {
    /// Frames are eye patches already; they are resampled to 50×50.
    WholeImage,
    /// Frames show a face; eyes are located with a landmark adapter.
    Landmarks {
        adapter: &'a dyn LandmarkAdapter,
        pad: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedSample {
    pub sample_id: String,
    pub eye_side: EyeSide,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    /// Left eye first, then right.
    pub metrics: Vec<EvalMetrics>,
    pub scored: Vec<(EyeSide, ScoredSample)>,
    pub skipped: Vec<SkippedSample>,
}

fn load_crop(path: &Path, side: EyeSide, mode: CropMode<'_>) -> Result<EyeCrop, EyeError> {
    match mode {
        CropMode::WholeImage => {
            let img = image::open(path)?.to_rgb8();
            EyeCrop::from_image(side, &img, None)
        }
        CropMode::Landmarks { adapter, pad } => {
            let pair = eyes::extract_eyes(adapter, &Frame::open(path, None)?, pad)?;
            Ok(match side {
                EyeSide::Left => pair.left,
                EyeSide::Right => pair.right,
            })
        }
    }
}

/// Scores each frame of a sample and keeps the maximum.
pub fn score_frames(
    model: &BlinkModel,
    sample_id: &str,
    crops: &[EyeCrop],
    label: Option<SampleLabel>,
) -> Result<ScoredSample, EvalError> {
    let scores = model.predict(crops)?;
    Ok(ScoredSample::new(sample_id, scores, label)?)
}

/// Per-eye metrics from already scored samples.
pub fn metrics_from_scored(scored: &[(EyeSide, ScoredSample)], threshold: f64) -> Vec<EvalMetrics> {
    [EyeSide::Left, EyeSide::Right]
        .into_iter()
        .map(|side| {
            EvalMetrics::from_predictions(
                side,
                scored
                    .iter()
                    .filter(|(s, x)| *s == side && x.label.is_some())
                    .map(|(_, x)| {
                        (
                            x.label.expect("filtered"),
                            classify_sample(x.sample_score, threshold),
                        )
                    }),
            )
        })
        .collect()
}

/// Crops, scores, max-aggregates and classifies every sample. Samples whose
/// frames cannot be cropped (e.g. no face found) are skipped and reported.
pub fn evaluate(
    samples: &[BenchmarkSample],
    model: &BlinkModel,
    threshold: f64,
    mode: CropMode<'_>,
) -> Result<EvalOutcome, EvalError> {
    let results: Vec<Result<(EyeSide, ScoredSample), SkippedSample>> = samples
        .par_iter()
        .map(|s| {
            let skip = |reason: String| SkippedSample {
                sample_id: s.sample_id.clone(),
                eye_side: s.eye_side,
                reason,
            };
            let crops = s
                .frames
                .iter()
                .map(|f| load_crop(f, s.eye_side, mode))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| skip(e.to_string()))?;
            let scored = score_frames(model, &s.sample_id, &crops, Some(s.label))
                .map_err(|e| skip(e.to_string()))?;
            Ok((s.eye_side, scored))
        })
        .collect();
    let mut scored = Vec::new();
    let mut skipped = Vec::new();
    for r in results {
        match r {
            Ok(x) => scored.push(x),
            Err(s) => {
                log::warn!("skipped {} ({}): {}", s.sample_id, s.eye_side, s.reason);
                skipped.push(s);
            }
        }
    }
    Ok(EvalOutcome {
        metrics: metrics_from_scored(&scored, threshold),
        scored,
        skipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowSource {
    Evaluated,
    Baseline,
}

/// One table row. Baseline rows are published numbers carried through unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub eye: String,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub source: RowSource,
}

fn eye_title(side: EyeSide) -> &'static str {
    match side {
        EyeSide::Left => "Left",
        EyeSide::Right => "Right",
    }
}

impl ReportRow {
    pub fn evaluated(method: &str, m: &EvalMetrics) -> Self {
        Self {
            method: method.to_string(),
            eye: eye_title(m.eye_side).to_string(),
            recall: m.recall,
            precision: m.precision,
            f1: m.f1,
            source: RowSource::Evaluated,
        }
    }
}

/// Reads baseline rows from CSV `method,eye,recall,precision,f1`.
pub fn read_baselines(path: &Path) -> Result<Vec<ReportRow>, EvalError> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        if rec.len() != 5 {
            return Err(EvalError::MalformedBaselines(format!(
                "row {}: expected 5 columns",
                i + 2
            )));
        }
        let num = |k: usize| {
            rec[k]
                .trim()
                .parse::<f64>()
                .map_err(|e| EvalError::MalformedBaselines(format!("row {}: {e}", i + 2)))
        };
        out.push(ReportRow {
            method: rec[0].trim().to_string(),
            eye: rec[1].trim().to_string(),
            recall: num(2)?,
            precision: num(3)?,
            f1: num(4)?,
            source: RowSource::Baseline,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub text: String,
    pub json: serde_json::Value,
    pub warnings: Vec<String>,
}

/// Largest tolerated gap between a row's F1 and the one implied by its P and R.
pub const F1_TOLERANCE: f64 = 1e-4;

/// Aligned text table plus JSON. Baselines come first, then evaluated rows;
/// values print with four decimals.
pub fn render_report(evaluated: &[ReportRow], baselines: &[ReportRow]) -> Report {
    let rows: Vec<&ReportRow> = baselines.iter().chain(evaluated).collect();
    let header = ["Method", "Eye", "Recall", "Precision", "F1", "Source"];
    let cells: Vec<[String; 6]> = rows
        .iter()
        .map(|r| {
            [
                r.method.clone(),
                r.eye.clone(),
                format!("{:.4}", r.recall),
                format!("{:.4}", r.precision),
                format!("{:.4}", r.f1),
                match r.source {
                    RowSource::Evaluated => "evaluated".to_string(),
                    RowSource::Baseline => "baseline".to_string(),
                },
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for c in &cells {
        for (w, s) in widths.iter_mut().zip(c) {
            *w = (*w).max(s.chars().count());
        }
    }
    let line = |vals: &[&str]| {
        let padded: Vec<String> = vals
            .iter()
            .zip(&widths)
            .map(|(v, w)| format!("{v:<w$}"))
            .collect();
        padded.join(" | ").trim_end().to_string()
    };
    let mut text = line(&header);
    text.push('\n');
    text.push_str(
        &widths
            .iter()
            .map(|w| "-".repeat(*w))
            .collect::<Vec<_>>()
            .join("-+-"),
    );
    text.push('\n');
    for c in &cells {
        let refs: Vec<&str> = c.iter().map(String::as_str).collect();
        text.push_str(&line(&refs));
        text.push('\n');
    }

    let mut warnings = Vec::new();
    for r in &rows {
        let implied = f1_score(r.precision, r.recall);
        if (implied - r.f1).abs() > F1_TOLERANCE {
            warnings.push(format!(
                "{} ({}): F1 {:.4} does not match 2PR/(P+R) = {:.4}",
                r.method, r.eye, r.f1, implied
            ));
        }
    }
    for w in &warnings {
        text.push_str("warning: ");
        text.push_str(w);
        text.push('\n');
    }
    let json = json!({ "rows": rows, "warnings": warnings });
    Report {
        text,
        json,
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-4
    }

    #[test]
    fn perfect_classifier() {
        let pairs = (0..10)
            .map(|_| (SampleLabel::Blink, SampleLabel::Blink))
            .chain((0..10).map(|_| (SampleLabel::NoBlink, SampleLabel::NoBlink)));
        let m = EvalMetrics::from_predictions(EyeSide::Left, pairs);
        assert_eq!((m.recall, m.precision, m.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn hand_computed_metrics() {
        let m = EvalMetrics::from_counts(EyeSide::Left, 58, 38, 3, 0);
        // 58/61, 58/96, 2·58/(2·58 + 38 + 3)
        assert!(close(m.recall, 0.9508), "{}", m.recall);
        assert!(close(m.precision, 0.6042), "{}", m.precision);
        assert!(close(m.f1, 0.7389), "{}", m.f1);
    }

    #[test]
    fn zero_denominators() {
        let m = EvalMetrics::from_counts(EyeSide::Right, 0, 0, 5, 5);
        assert_eq!((m.recall, m.precision, m.f1), (0.0, 0.0, 0.0));
        let m = EvalMetrics::from_counts(EyeSide::Right, 0, 0, 0, 0);
        assert_eq!((m.recall, m.precision, m.f1), (0.0, 0.0, 0.0));
    }

    fn published_rows() -> Vec<ReportRow> {
        [
            ("Left", 0.9603, 0.6080, 0.7446),
            ("Right", 0.7950, 0.7348, 0.7637),
        ]
        .into_iter()
        .map(|(eye, r, p, f)| ReportRow {
            method: "Ours".into(),
            eye: eye.into(),
            recall: r,
            precision: p,
            f1: f,
            source: RowSource::Baseline,
        })
        .collect()
    }

    #[test]
    fn baselines_pass_through_verbatim() {
        let rep = render_report(&[], &published_rows());
        let expected = "\
Method | Eye   | Recall | Precision | F1     | Source
-------+-------+--------+-----------+--------+---------
Ours   | Left  | 0.9603 | 0.6080    | 0.7446 | baseline
Ours   | Right | 0.7950 | 0.7348    | 0.7637 | baseline
";
        assert_eq!(rep.text, expected);
        assert!(rep.warnings.is_empty());
        assert_eq!(rep.json["rows"][1]["precision"].to_string(), "0.7348");
    }

    #[test]
    fn inconsistent_f1_is_flagged() {
        let mut rows = published_rows();
        rows[0].f1 = 0.7;
        let rep = render_report(&rows, &[]);
        assert_eq!(rep.warnings.len(), 1);
        assert!(rep.text.contains("warning: Ours (Left)"));
    }

    #[test]
    fn evaluated_rows_only() {
        let m = EvalMetrics::from_counts(EyeSide::Left, 1, 1, 1, 1);
        let rep = render_report(&[ReportRow::evaluated("cnn", &m)], &[]);
        assert_eq!(rep.text.lines().count(), 3);
        assert!(rep
            .text
            .contains("cnn    | Left | 0.5000 | 0.5000    | 0.5000 | evaluated"));
    }

    #[test]
    fn benchmark_layout_is_validated() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        let img = image::RgbImage::new(50, 50);
        let mk = |label: &str, id: &str, side: &str, n: usize| {
            let d = root.join(label).join(id).join(side);
            fs::create_dir_all(&d).unwrap();
            for k in 0..n {
                img.save(d.join(format!("{k:02}.png"))).unwrap();
            }
        };
        mk("blink", "s1", "left", 13);
        mk("blink", "s1", "right", 12);
        mk("no_blink", "s2", "left", 13);
        mk("no_blink", "s3", "left", 13);
        fs::write(
            root.join("labels.csv"),
            "sample_id,label\ns1,blink\ns2,no_blink\ns3,blink\n",
        )
        .unwrap();
        let b = load_benchmark(root).unwrap();
        assert_eq!(b.samples.len(), 2);
        assert_eq!(b.malformed.len(), 2);
        assert_eq!(b.counts()[&(SampleLabel::Blink, EyeSide::Left)], 1);

        let empty = tempfile::tempdir().unwrap();
        let b = load_benchmark(empty.path()).unwrap();
        assert!(b.samples.is_empty() && b.counts().is_empty());
    }

    proptest! {
        #[test]
        fn confusion_invariants(truth in prop::collection::vec(any::<bool>(), 0..60), pred_seed in any::<u64>()) {
            let label = |b: bool| if b { SampleLabel::Blink } else { SampleLabel::NoBlink };
            let pairs: Vec<_> = truth.iter().enumerate().map(|(i, &t)| (label(t), label((pred_seed >> (i % 64)) & 1 == 1))).collect();
            let m = EvalMetrics::from_predictions(EyeSide::Left, pairs.clone());
            prop_assert_eq!(m.tp + m.fn_, truth.iter().filter(|&&t| t).count());
            prop_assert_eq!(m.fp + m.tn, truth.iter().filter(|&&t| !t).count());
            prop_assert!((f1_score(m.precision, m.recall) - m.f1).abs() <= 1e-12);
            let mut rev = pairs;
            rev.reverse();
            prop_assert_eq!(EvalMetrics::from_predictions(EyeSide::Left, rev), m);
        }
    }
}
