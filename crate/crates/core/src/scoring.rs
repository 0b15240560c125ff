//! From per-frame scores to sample decisions and blink events.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labeler::SampleLabel;

/// Default minimum gap between distinct events, in frames.
pub const DEFAULT_MIN_GAP: u64 = 4;
/// Runs longer than this are flagged as long closures rather than blinks.
pub const MAX_BLINK_RUN: u64 = 13;

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("no scores to aggregate")]
    EmptyScores,
    #[error("no {0} scores to calibrate on")]
    EmptyClass(&'static str),
    #[error("malformed scores file at row {row}: {reason}")]
    Malformed { row: usize, reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub sample_id: String,
    pub frame_scores: Vec<f64>,
    pub sample_score: f64,
    pub label: Option<SampleLabel>,
}

impl ScoredSample {
    pub fn new(
        sample_id: &str,
        frame_scores: Vec<f64>,
        label: Option<SampleLabel>,
    ) -> Result<Self, ScoreError> {
        let sample_score = score_sample(&frame_scores)?;
        Ok(Self {
            sample_id: sample_id.to_string(),
            frame_scores,
            sample_score,
            label,
        })
    }
}

/// The sample score is the highest frame score.
pub fn score_sample(frame_scores: &[f64]) -> Result<f64, ScoreError> {
    frame_scores
        .iter()
        .copied()
        .reduce(f64::max)
        .ok_or(ScoreError::EmptyScores)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EerPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub fnr: f64,
}

/// Equal-error threshold. Candidates are the midpoints between adjacent
/// distinct scores plus one sentinel below the minimum and one above the
/// maximum; a score is positive iff it exceeds the threshold. Picks the
/// smallest |FPR − FNR|, then the smallest FPR + FNR, then the smallest
/// threshold. Rates are compared exactly in integer arithmetic.
pub fn calibrate_threshold(pos: &[f64], neg: &[f64]) -> Result<EerPoint, ScoreError> {
    if pos.is_empty() {
        return Err(ScoreError::EmptyClass("positive"));
    }
    if neg.is_empty() {
        return Err(ScoreError::EmptyClass("negative"));
    }
    // (score, is_positive), ascending; sweeping the threshold upward moves
    // each passed score from "predicted positive" to "predicted negative".
    let mut merged: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    merged.sort_by(|a, b| a.0.total_cmp(&b.0));

    let np = pos.len() as u128;
    let nn = neg.len() as u128;
    let rank = |fp: usize, fn_: usize| {
        let a = fp as u128 * np;
        let b = fn_ as u128 * nn;
        (a.abs_diff(b), a + b)
    };

    // below the minimum everything is positive
    let mut fp = neg.len();
    let mut fn_ = 0usize;
    let mut best = (rank(fp, fn_), merged[0].0 - 1.0, fp, fn_);
    let mut i = 0;
    while i < merged.len() {
        let v = merged[i].0;
        while i < merged.len() && merged[i].0 == v {
            if merged[i].1 {
                fn_ += 1;
            } else {
                fp -= 1;
            }
            i += 1;
        }
        let threshold = if i < merged.len() {
            (v + merged[i].0) / 2.0
        } else {
            v + 1.0
        };
        let r = rank(fp, fn_);
        // thresholds only increase, so a tie never replaces the incumbent
        if r < best.0 {
            best = (r, threshold, fp, fn_);
        }
    }
    let (_, threshold, fp, fn_) = best;
    Ok(EerPoint {
        threshold,
        fpr: fp as f64 / neg.len() as f64,
        fnr: fn_ as f64 / pos.len() as f64,
    })
}

pub fn classify_sample(sample_score: f64, threshold: f64) -> SampleLabel {
    if sample_score > threshold {
        SampleLabel::Blink
    } else {
        SampleLabel::NoBlink
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlinkEvent {
    pub start_frame: u64,
    pub end_frame: u64,
    pub peak_score: f64,
    /// Longer than any blink; kept whole rather than split.
    pub long_closure: bool,
}

impl BlinkEvent {
    pub fn duration_frames(&self) -> u64 {
        self.end_frame - self.start_frame + 1
    }
}

/// Runs of frames scoring above `threshold`. Runs separated by fewer than
/// `min_gap_frames` sub-threshold frames are merged.
pub fn detect_events(frame_scores: &[f64], threshold: f64, min_gap_frames: u64) -> Vec<BlinkEvent> {
    let mut events: Vec<BlinkEvent> = Vec::new();
    let mut i = 0;
    while i < frame_scores.len() {
        if frame_scores[i] <= threshold {
            i += 1;
            continue;
        }
        let start = i;
        let mut peak = frame_scores[i];
        while i < frame_scores.len() && frame_scores[i] > threshold {
            peak = peak.max(frame_scores[i]);
            i += 1;
        }
        let (start, end) = (start as u64, i as u64 - 1);
        match events.last_mut() {
            Some(prev) if start - prev.end_frame - 1 < min_gap_frames => {
                prev.end_frame = end;
                prev.peak_score = prev.peak_score.max(peak);
            }
            _ => events.push(BlinkEvent {
                start_frame: start,
                end_frame: end,
                peak_score: peak,
                long_closure: false,
            }),
        }
    }
    for e in &mut events {
        e.long_closure = e.duration_frames() > MAX_BLINK_RUN;
    }
    events
}

pub fn write_scores(path: &Path, samples: &[ScoredSample]) -> Result<(), ScoreError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["sample_id", "frame_offset", "score", "label"])?;
    for s in samples {
        for (k, v) in s.frame_scores.iter().enumerate() {
            w.write_record([
                s.sample_id.clone(),
                k.to_string(),
                v.to_string(),
                s.label.map(|l| l.as_str().to_string()).unwrap_or_default(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a scores file (`sample_id,frame_offset,score,label`) and regroups rows into samples, in order of first
/// appearance. Frame offsets must run 0, 1, 2, ... within each sample.
pub fn read_scores(path: &Path) -> Result<Vec<ScoredSample>, ScoreError> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut order: Vec<String> = Vec::new();
    let mut rows: std::collections::HashMap<String, (Vec<f64>, Option<SampleLabel>)> =
        Default::default();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let bad = |reason: String| ScoreError::Malformed { row, reason };
        if rec.len() != 4 {
            return Err(bad(format!("expected 4 columns, got {}", rec.len())));
        }
        let id = rec[0].to_string();
        let offset: usize = rec[1]
            .trim()
            .parse()
            .map_err(|e| bad(format!("frame_offset: {e}")))?;
        let score: f64 = rec[2]
            .trim()
            .parse()
            .map_err(|e| bad(format!("score: {e}")))?;
        let label = match rec[3].trim() {
            "" => None,
            s => Some(SampleLabel::parse(s).ok_or_else(|| bad(format!("unknown label `{s}`")))?),
        };
        let entry = rows.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            (Vec::new(), label)
        });
        if offset != entry.0.len() {
            return Err(bad(format!(
                "sample {id}: expected frame_offset {}, got {offset}",
                entry.0.len()
            )));
        }
        if entry.1 != label {
            return Err(bad(format!("sample {id}: label changes between rows")));
        }
        entry.0.push(score);
    }
    order
        .into_iter()
        .map(|id| {
            let (scores, label) = rows.remove(&id).expect("id recorded on insert");
            ScoredSample::new(&id, scores, label)
        })
        .collect()
}

/// Calibration output, including which data the threshold was fixed on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub threshold: f64,
    pub fpr: f64,
    pub fnr: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub calibration_split: String,
}

/// Calibrates on labelled samples (unlabelled ones are ignored).
pub fn calibrate_samples(
    samples: &[ScoredSample],
    calibration_split: &str,
) -> Result<ThresholdReport, ScoreError> {
    let pos: Vec<f64> = samples
        .iter()
        .filter(|s| s.label == Some(SampleLabel::Blink))
        .map(|s| s.sample_score)
        .collect();
    let neg: Vec<f64> = samples
        .iter()
        .filter(|s| s.label == Some(SampleLabel::NoBlink))
        .map(|s| s.sample_score)
        .collect();
    let p = calibrate_threshold(&pos, &neg)?;
    Ok(ThresholdReport {
        threshold: p.threshold,
        fpr: p.fpr,
        fnr: p.fnr,
        n_pos: pos.len(),
        n_neg: neg.len(),
        calibration_split: calibration_split.to_string(),
    })
}

impl ThresholdReport {
    pub fn save(&self, path: &Path) -> Result<(), ScoreError> {
        let json = serde_json::to_string_pretty(self).expect("report serializes");
        fs::write(path, json + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ScoreError> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| ScoreError::Malformed {
            row: e.line(),
            reason: e.to_string(),
        })
    }
}
