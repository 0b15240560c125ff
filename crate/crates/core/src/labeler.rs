//! Blink candidates from EEG blink-strength peaks, reviewer decisions, and
//! the 21-frame blink / no-blink dataset built from them.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eyes::{self, EyeError, Frame, LandmarkAdapter, EYE_CONVENTION};
use crate::ingest::{time_to_frame, EegSample, IngestError, SessionManifest, StreamKind};

/// Frames on each side of a blink centre.
pub const HALF_WINDOW: u64 = 10;
pub const WINDOW_LEN: u64 = 2 * HALF_WINDOW + 1;
/// Candidates whose centres are closer than this are one blink.
pub const MERGE_FRAMES: u64 = 13;
pub const DEFAULT_QUANTILE: f64 = 0.10;
pub const DEFAULT_MARGIN: u64 = 15;

#[derive(Debug, Error)]
pub enum LabelerError {
    #[error("EEG trace is empty")]
    EmptyTrace,
    #[error("quantile must lie in (0, 1), got {0}")]
    InvalidQuantile(f64),
    #[error("window around frame {center} does not fit a stream of {frame_count} frames")]
    WindowOutOfBounds { center: u64, frame_count: u64 },
    #[error("only {max} negative windows fit, {requested} requested")]
    InsufficientNegativeFootage { requested: usize, max: usize },
    #[error("malformed {file} at row {row}: {reason}")]
    Malformed {
        file: &'static str,
        row: usize,
        reason: String,
    },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Eye(#[from] EyeError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateStatus {
    Pending,
    Accepted,
    Rejected,
}

impl CandidateStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Pending => "pending",
            Self::Accepted => "accepted",
            Self::Rejected => "rejected",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pending" => Some(Self::Pending),
            "accepted" => Some(Self::Accepted),
            "rejected" => Some(Self::Rejected),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlinkCandidate {
    pub candidate_id: String,
    pub session_id: String,
    pub t_eeg: f64,
    pub center_frame: u64,
    pub strength: f64,
    pub status: CandidateStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Accept,
    Reject,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Accept => "accept",
            Self::Reject => "reject",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "accept" => Some(Self::Accept),
            "reject" => Some(Self::Reject),
            _ => None,
        }
    }

    fn status(self) -> CandidateStatus {
        match self {
            Self::Accept => CandidateStatus::Accepted,
            Self::Reject => CandidateStatus::Rejected,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub candidate_id: String,
    pub decision: Decision,
    pub reviewer: String,
    pub decided_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleLabel {
    Blink,
    NoBlink,
}

impl SampleLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Blink => "blink",
            Self::NoBlink => "no_blink",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "blink" => Some(Self::Blink),
            "no_blink" => Some(Self::NoBlink),
            _ => None,
        }
    }
}

/// A 21-frame window; `frame_range` is inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub sample_id: String,
    pub label: SampleLabel,
    pub session_id: String,
    pub frame_range: (u64, u64),
    pub streams: Vec<StreamKind>,
}

impl LabeledSample {
    pub fn center(&self) -> u64 {
        self.frame_range.0 + HALF_WINDOW
    }

    pub fn frames(&self) -> impl Iterator<Item = u64> {
        self.frame_range.0..=self.frame_range.1
    }
}

/// Inverted-CDF quantile: the smallest value with at least `q·n` values at or below it.
fn lower_quantile(sorted: &[f64], q: f64) -> f64 {
    let k = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[k - 1]
}

/// One candidate per local maximum of blink strength at or above the
/// `min_strength_quantile` quantile of the positive strengths. Plateaus
/// count once, at their first sample. Candidates closer than
/// [`MERGE_FRAMES`] are merged into the stronger one.
pub fn extract_candidates(
    session_id: &str,
    eeg: &[EegSample],
    fps: f64,
    min_strength_quantile: f64,
) -> Result<Vec<BlinkCandidate>, LabelerError> {
    if eeg.is_empty() {
        return Err(LabelerError::EmptyTrace);
    }
    if !(min_strength_quantile > 0.0 && min_strength_quantile < 1.0) {
        return Err(LabelerError::InvalidQuantile(min_strength_quantile));
    }
    let s: Vec<f64> = eeg.iter().map(|e| e.blink_strength).collect();
    let mut positive: Vec<f64> = s.iter().copied().filter(|&v| v > 0.0).collect();
    if positive.is_empty() {
        return Ok(Vec::new());
    }
    positive.sort_by(f64::total_cmp);
    let cutoff = lower_quantile(&positive, min_strength_quantile);

    let n = s.len();
    let mut kept: Vec<(usize, u64)> = Vec::new();
    for i in 0..n {
        let v = s[i];
        let rising = i == 0 || v > s[i - 1];
        let not_falling_after = i + 1 == n || v >= s[i + 1];
        if v > 0.0 && v >= cutoff && rising && not_falling_after {
            let frame = time_to_frame(eeg[i].t, fps)?;
            match kept.last_mut() {
                Some(last) if frame - last.1 < MERGE_FRAMES => {
                    if v > s[last.0] {
                        *last = (i, frame);
                    }
                }
                _ => kept.push((i, frame)),
            }
        }
    }
    Ok(kept
        .into_iter()
        .enumerate()
        .map(|(k, (i, frame))| BlinkCandidate {
            candidate_id: format!("{session_id}_c{:04}", k + 1),
            session_id: session_id.to_string(),
            t_eeg: eeg[i].t,
            center_frame: frame,
            strength: s[i],
            status: CandidateStatus::Pending,
        })
        .collect())
}

pub const CANDIDATE_HEADER: &str = "candidate_id,session_id,t_eeg,center_frame,strength,status";
pub const DECISION_HEADER: &str = "candidate_id,decision,reviewer,decided_at";

pub fn write_candidates(path: &Path, candidates: &[BlinkCandidate]) -> Result<(), LabelerError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CANDIDATE_HEADER.split(','))?;
    for c in candidates {
        w.write_record([
            c.candidate_id.clone(),
            c.session_id.clone(),
            c.t_eeg.to_string(),
            c.center_frame.to_string(),
            c.strength.to_string(),
            c.status.as_str().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn check_header(
    reader: &mut csv::Reader<fs::File>,
    expected: &str,
    file: &'static str,
) -> Result<(), LabelerError> {
    let header: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.join(",") != expected {
        return Err(LabelerError::Malformed {
            file,
            row: 1,
            reason: format!("expected header `{expected}`, got `{}`", header.join(",")),
        });
    }
    Ok(())
}

pub fn read_candidates(path: &Path) -> Result<Vec<BlinkCandidate>, LabelerError> {
    let mut reader = csv::Reader::from_path(path)?;
    check_header(&mut reader, CANDIDATE_HEADER, "candidates")?;
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let bad = |reason: String| LabelerError::Malformed {
            file: "candidates",
            row,
            reason,
        };
        let num = |k: usize| -> Result<f64, LabelerError> {
            rec[k]
                .trim()
                .parse::<f64>()
                .map_err(|e| bad(format!("column {k}: {e}")))
        };
        out.push(BlinkCandidate {
            candidate_id: rec[0].to_string(),
            session_id: rec[1].to_string(),
            t_eeg: num(2)?,
            center_frame: rec[3]
                .trim()
                .parse()
                .map_err(|e| bad(format!("center_frame: {e}")))?,
            strength: num(4)?,
            status: CandidateStatus::parse(rec[5].trim())
                .ok_or_else(|| bad(format!("unknown status `{}`", &rec[5])))?,
        });
    }
    Ok(out)
}

/// Formats a decision as one CSV line (with trailing newline), the exact
/// bytes both the review service and hand-written files use.
pub fn decision_line(d: &DecisionRecord) -> String {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record([
        d.candidate_id.as_str(),
        d.decision.as_str(),
        d.reviewer.as_str(),
        &d.decided_at.to_rfc3339_opts(SecondsFormat::AutoSi, true),
    ])
    .expect("writing to memory");
    String::from_utf8(w.into_inner().expect("flushing to memory")).expect("csv output is utf-8")
}

/// Appends decisions, writing the header first when the file is new or empty.
pub fn append_decisions(path: &Path, decisions: &[DecisionRecord]) -> Result<(), LabelerError> {
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    let mut buf = String::new();
    if fresh {
        buf.push_str(DECISION_HEADER);
        buf.push('\n');
    }
    for d in decisions {
        buf.push_str(&decision_line(d));
    }
    f.write_all(buf.as_bytes())?;
    f.sync_data()?;
    Ok(())
}

/// Reads a decisions file in row order. A missing file means no decisions.
pub fn read_decisions(path: &Path) -> Result<Vec<DecisionRecord>, LabelerError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut reader = csv::Reader::from_path(path)?;
    check_header(&mut reader, DECISION_HEADER, "decisions")?;
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let bad = |reason: String| LabelerError::Malformed {
            file: "decisions",
            row,
            reason,
        };
        if rec.len() != 4 {
            return Err(bad(format!("expected 4 columns, got {}", rec.len())));
        }
        out.push(DecisionRecord {
            candidate_id: rec[0].to_string(),
            decision: Decision::parse(rec[1].trim())
                .ok_or_else(|| bad(format!("unknown decision `{}`", &rec[1])))?,
            reviewer: rec[2].to_string(),
            decided_at: DateTime::parse_from_rfc3339(rec[3].trim())
                .map_err(|e| bad(format!("decided_at: {e}")))?
                .with_timezone(&Utc),
        });
    }
    Ok(out)
}

/// For each candidate id, the decision that wins: latest `decided_at`, and
/// among equal timestamps the later row.
pub fn latest_decisions(decisions: &[DecisionRecord]) -> HashMap<&str, &DecisionRecord> {
    let mut latest: HashMap<&str, &DecisionRecord> = HashMap::new();
    for d in decisions {
        match latest.get(d.candidate_id.as_str()) {
            Some(prev) if prev.decided_at > d.decided_at => {}
            _ => {
                latest.insert(&d.candidate_id, d);
            }
        }
    }
    latest
}

/// Applies decisions and returns the updated candidates together with the
/// decision ids that match no candidate (sorted, deduplicated).
pub fn apply_decisions(
    candidates: &[BlinkCandidate],
    decisions: &[DecisionRecord],
) -> (Vec<BlinkCandidate>, Vec<String>) {
    let latest = latest_decisions(decisions);
    let updated = candidates
        .iter()
        .map(|c| {
            let mut c = c.clone();
            if let Some(d) = latest.get(c.candidate_id.as_str()) {
                c.status = d.decision.status();
            }
            c
        })
        .collect();
    let known: std::collections::HashSet<&str> =
        candidates.iter().map(|c| c.candidate_id.as_str()).collect();
    let mut unknown: Vec<String> = latest
        .keys()
        .filter(|id| !known.contains(**id))
        .map(|id| id.to_string())
        .collect();
    unknown.sort();
    (updated, unknown)
}

/// The 21-frame window centred on `center_frame`.
pub fn extract_window(center_frame: u64, frame_count: u64) -> Result<(u64, u64), LabelerError> {
    if center_frame < HALF_WINDOW || center_frame + HALF_WINDOW >= frame_count {
        return Err(LabelerError::WindowOutOfBounds {
            center: center_frame,
            frame_count,
        });
    }
    Ok((center_frame - HALF_WINDOW, center_frame + HALF_WINDOW))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedCandidate {
    pub candidate_id: String,
    pub reason: String,
}

/// Blink samples for the accepted candidates of one session. Candidates
/// whose window leaves the footage are dropped and reported.
pub fn blink_samples(
    session: &SessionManifest,
    candidates: &[BlinkCandidate],
) -> (Vec<LabeledSample>, Vec<DroppedCandidate>) {
    let frame_count = session.common_frame_count();
    let mut samples = Vec::new();
    let mut dropped = Vec::new();
    for c in candidates
        .iter()
        .filter(|c| c.session_id == session.session_id && c.status == CandidateStatus::Accepted)
    {
        match extract_window(c.center_frame, frame_count) {
            Ok(range) => samples.push(LabeledSample {
                sample_id: c.candidate_id.clone(),
                label: SampleLabel::Blink,
                session_id: session.session_id.clone(),
                frame_range: range,
                streams: session.stream_kinds(),
            }),
            Err(e) => {
                log::warn!("dropping candidate {}: {e}", c.candidate_id);
                dropped.push(DroppedCandidate {
                    candidate_id: c.candidate_id.clone(),
                    reason: e.to_string(),
                });
            }
        }
    }
    (samples, dropped)
}

/// Maximal runs of frames `[a, b]` that no blocked window (widened by
/// `margin`) touches.
fn free_segments(blocked: &[(u64, u64)], frame_count: u64, margin: u64) -> Vec<(u64, u64)> {
    let mut spans: Vec<(u64, u64)> = blocked
        .iter()
        .map(|&(a, b)| (a.saturating_sub(margin), b.saturating_add(margin)))
        .collect();
    spans.sort_unstable();
    let mut free = Vec::new();
    let mut cursor = 0u64;
    for (a, b) in spans {
        if a > cursor {
            free.push((cursor, (a - 1).min(frame_count.saturating_sub(1))));
        }
        cursor = cursor.max(b.saturating_add(1));
        if cursor >= frame_count {
            break;
        }
    }
    if cursor < frame_count {
        free.push((cursor, frame_count - 1));
    }
    free.retain(|&(a, b)| a <= b && b < frame_count);
    free
}

fn capacity(segment: (u64, u64)) -> usize {
    ((segment.1 - segment.0 + 1) / WINDOW_LEN) as usize
}

/// Largest number of disjoint negative windows a session can hold.
pub fn negative_capacity(blocked: &[(u64, u64)], frame_count: u64, margin: u64) -> usize {
    free_segments(blocked, frame_count, margin)
        .into_iter()
        .map(capacity)
        .sum()
}

/// `count` disjoint 21-frame windows, each more than `margin` frames from
/// every blocked window. Slots are drawn uniformly among all feasible
/// packings per segment, so any `count` up to the capacity succeeds.
pub fn sample_negative_windows(
    blocked: &[(u64, u64)],
    frame_count: u64,
    count: usize,
    margin: u64,
    seed: u64,
) -> Result<Vec<(u64, u64)>, LabelerError> {
    let segments = free_segments(blocked, frame_count, margin);
    let caps: Vec<usize> = segments.iter().map(|&s| capacity(s)).collect();
    let max: usize = caps.iter().sum();
    if count > max {
        return Err(LabelerError::InsufficientNegativeFootage {
            requested: count,
            max,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_segment = vec![0usize; segments.len()];
    let owner: Vec<usize> = caps
        .iter()
        .enumerate()
        .flat_map(|(i, &c)| std::iter::repeat_n(i, c))
        .collect();
    for slot in index::sample(&mut rng, max, count) {
        per_segment[owner[slot]] += 1;
    }

    let mut windows = Vec::with_capacity(count);
    for (&(a, b), &k) in segments.iter().zip(&per_segment) {
        if k == 0 {
            continue;
        }
        let slack = (b - a + 1) - WINDOW_LEN * k as u64;
        let mut offsets: Vec<u64> = (0..k).map(|_| rng.gen_range(0..=slack)).collect();
        offsets.sort_unstable();
        for (j, off) in offsets.into_iter().enumerate() {
            let start = a + off + WINDOW_LEN * j as u64;
            windows.push((start, start + WINDOW_LEN - 1));
        }
    }
    windows.sort_unstable();
    Ok(windows)
}

/// No-blink samples for one session, margin-separated from `blink_windows`.
pub fn sample_negatives(
    blink_windows: &[LabeledSample],
    session: &SessionManifest,
    count: usize,
    margin_frames: u64,
    seed: u64,
) -> Result<Vec<LabeledSample>, LabelerError> {
    let blocked: Vec<(u64, u64)> = blink_windows
        .iter()
        .filter(|s| s.session_id == session.session_id)
        .map(|s| s.frame_range)
        .collect();
    let windows = sample_negative_windows(
        &blocked,
        session.common_frame_count(),
        count,
        margin_frames,
        seed,
    )?;
    Ok(windows
        .into_iter()
        .enumerate()
        .map(|(i, range)| LabeledSample {
            sample_id: format!("{}_n{:04}", session.session_id, i + 1),
            label: SampleLabel::NoBlink,
            session_id: session.session_id.clone(),
            frame_range: range,
            streams: session.stream_kinds(),
        })
        .collect())
}

/// How negatives are balanced against blinks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeBalance {
    /// Total negatives equal total blinks; spread over sessions by free footage.
    #[default]
    Global,
    /// Each session contributes as many negatives as it has blinks.
    PerSession,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetOptions {
    pub margin_frames: u64,
    pub balance: NegativeBalance,
    pub seed: u64,
    pub pad: f64,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        Self {
            margin_frames: DEFAULT_MARGIN,
            balance: NegativeBalance::Global,
            seed: 0,
            pad: eyes::DEFAULT_PAD,
        }
    }
}

/// Samples to write, before any image work.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetPlan {
    pub samples: Vec<LabeledSample>,
    pub dropped_candidates: Vec<DroppedCandidate>,
    pub unknown_decisions: Vec<String>,
}

/// Splits `total` over sessions proportionally to `caps` (largest remainder),
/// never exceeding a session's capacity.
fn allocate(total: usize, caps: &[usize]) -> Vec<usize> {
    let sum: usize = caps.iter().sum();
    if sum == 0 {
        return vec![0; caps.len()];
    }
    let total = total.min(sum);
    let mut alloc: Vec<usize> = caps.iter().map(|&c| c * total / sum).collect();
    let mut rest = total - alloc.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..caps.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse((caps[i] * total) % sum), i));
    while rest > 0 {
        for &i in &order {
            if rest > 0 && alloc[i] < caps[i] {
                alloc[i] += 1;
                rest -= 1;
            }
        }
    }
    alloc
}

/// Applies decisions, windows the accepted candidates and draws balanced negatives.
pub fn plan_dataset(
    sessions: &[SessionManifest],
    candidates: &[BlinkCandidate],
    decisions: &[DecisionRecord],
    options: &DatasetOptions,
) -> Result<DatasetPlan, LabelerError> {
    let (candidates, unknown) = apply_decisions(candidates, decisions);
    let mut plan = DatasetPlan {
        unknown_decisions: unknown,
        ..DatasetPlan::default()
    };
    let mut blinks_per_session = Vec::with_capacity(sessions.len());
    for s in sessions {
        let (samples, dropped) = blink_samples(s, &candidates);
        plan.dropped_candidates.extend(dropped);
        blinks_per_session.push(samples);
    }
    let caps: Vec<usize> = sessions
        .iter()
        .zip(&blinks_per_session)
        .map(|(s, b)| {
            let blocked: Vec<_> = b.iter().map(|x| x.frame_range).collect();
            negative_capacity(&blocked, s.common_frame_count(), options.margin_frames)
        })
        .collect();
    let wanted: Vec<usize> = match options.balance {
        NegativeBalance::PerSession => blinks_per_session.iter().map(Vec::len).collect(),
        NegativeBalance::Global => {
            let total: usize = blinks_per_session.iter().map(Vec::len).sum();
            let max: usize = caps.iter().sum();
            if total > max {
                return Err(LabelerError::InsufficientNegativeFootage {
                    requested: total,
                    max,
                });
            }
            allocate(total, &caps)
        }
    };
    for (i, s) in sessions.iter().enumerate() {
        let seed = options.seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let negatives = sample_negatives(
            &blinks_per_session[i],
            s,
            wanted[i],
            options.margin_frames,
            seed,
        )?;
        plan.samples.append(&mut blinks_per_session[i]);
        plan.samples.extend(negatives);
    }
    Ok(plan)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedSample {
    pub sample_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub blink_samples: usize,
    pub no_blink_samples: usize,
    /// Cropped eye images: samples × 21 frames × 2 eyes × streams.
    pub eye_images: u64,
    /// Full frames stored next to the crops: samples × 21 × streams.
    pub face_images: u64,
    pub failed_samples: Vec<FailedSample>,
    pub dropped_candidates: Vec<DroppedCandidate>,
    pub unknown_decisions: Vec<String>,
}

impl DatasetSummary {
    /// Counts for the given (successfully written) samples.
    pub fn from_samples(samples: &[LabeledSample]) -> Self {
        let mut s = Self::default();
        for x in samples {
            match x.label {
                SampleLabel::Blink => s.blink_samples += 1,
                SampleLabel::NoBlink => s.no_blink_samples += 1,
            }
            let streams = x.streams.len() as u64;
            s.eye_images += WINDOW_LEN * 2 * streams;
            s.face_images += WINDOW_LEN * streams;
        }
        s
    }

    pub fn total_samples(&self) -> usize {
        self.blink_samples + self.no_blink_samples
    }
}

#[derive(Serialize)]
struct FrameBoxes {
    offset: u64,
    frame_index: u64,
    boxes: BTreeMap<String, BTreeMap<String, [f64; 4]>>,
}

#[derive(Serialize)]
struct SampleJson<'a> {
    sample_id: &'a str,
    label: SampleLabel,
    session_id: &'a str,
    frame_range: [u64; 2],
    center_frame: u64,
    streams: Vec<&'static str>,
    eye_convention: &'static str,
    frames: Vec<FrameBoxes>,
}

pub fn sample_dir(output_dir: &Path, sample: &LabeledSample) -> PathBuf {
    output_dir
        .join(sample.label.as_str())
        .join(&sample.sample_id)
}

fn write_sample(
    output_dir: &Path,
    sample: &LabeledSample,
    session: &SessionManifest,
    adapter: &dyn LandmarkAdapter,
    pad: f64,
) -> Result<(), LabelerError> {
    let dir = sample_dir(output_dir, sample);
    let mut frames: Vec<FrameBoxes> = sample
        .frames()
        .enumerate()
        .map(|(k, f)| FrameBoxes {
            offset: k as u64,
            frame_index: f,
            boxes: BTreeMap::new(),
        })
        .collect();
    for &kind in &sample.streams {
        let stream = session
            .stream(kind)
            .ok_or(IngestError::MissingStream(kind))?;
        let sdir = dir.join(kind.as_str());
        fs::create_dir_all(&sdir)?;
        for (k, f) in sample.frames().enumerate() {
            let source = session.frame_ref(kind, f)?;
            let path = stream.frame_path(f);
            if !path.is_file() {
                return Err(IngestError::MissingFile(path).into());
            }
            let frame = Frame::open(&path, Some(source))?;
            let pair = eyes::extract_eyes(adapter, &frame, pad)?;
            frame
                .image
                .save(sdir.join(format!("face_{k:02}.png")))
                .map_err(EyeError::from)?;
            pair.left
                .to_image()
                .save(sdir.join(format!("left_eye_{k:02}.png")))
                .map_err(EyeError::from)?;
            pair.right
                .to_image()
                .save(sdir.join(format!("right_eye_{k:02}.png")))
                .map_err(EyeError::from)?;
            let mut boxes = BTreeMap::new();
            boxes.insert("left".to_string(), pair.left_box.as_array());
            boxes.insert("right".to_string(), pair.right_box.as_array());
            frames[k].boxes.insert(kind.as_str().to_string(), boxes);
        }
    }
    let meta = SampleJson {
        sample_id: &sample.sample_id,
        label: sample.label,
        session_id: &sample.session_id,
        frame_range: [sample.frame_range.0, sample.frame_range.1],
        center_frame: sample.center(),
        streams: sample.streams.iter().map(|k| k.as_str()).collect(),
        eye_convention: EYE_CONVENTION,
        frames,
    };
    let json = serde_json::to_string_pretty(&meta).expect("sample metadata serializes");
    fs::write(dir.join("sample.json"), json + "\n")?;
    Ok(())
}

/// Writes every planned sample. A sample that fails (missing frame, no
/// face found, ...) is removed and reported; the rest of the dataset stands.
pub fn write_dataset(
    plan: &DatasetPlan,
    sessions: &[SessionManifest],
    output_dir: &Path,
    adapter: &dyn LandmarkAdapter,
    pad: f64,
) -> Result<DatasetSummary, LabelerError> {
    fs::create_dir_all(output_dir)?;
    let by_id: HashMap<&str, &SessionManifest> = sessions
        .iter()
        .map(|s| (s.session_id.as_str(), s))
        .collect();
    let results: Vec<Result<(), String>> = plan
        .samples
        .par_iter()
        .map(|sample| {
            let session = by_id
                .get(sample.session_id.as_str())
                .ok_or_else(|| format!("unknown session {}", sample.session_id))?;
            write_sample(output_dir, sample, session, adapter, pad).map_err(|e| e.to_string())
        })
        .collect();

    let mut written = Vec::new();
    let mut failed = Vec::new();
    for (sample, r) in plan.samples.iter().zip(results) {
        match r {
            Ok(()) => written.push(sample.clone()),
            Err(reason) => {
                log::warn!("sample {} failed: {reason}", sample.sample_id);
                let _ = fs::remove_dir_all(sample_dir(output_dir, sample));
                failed.push(FailedSample {
                    sample_id: sample.sample_id.clone(),
                    reason,
                });
            }
        }
    }
    let mut summary = DatasetSummary::from_samples(&written);
    summary.failed_samples = failed;
    summary.dropped_candidates = plan.dropped_candidates.clone();
    summary.unknown_decisions = plan.unknown_decisions.clone();
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(output_dir.join("summary.json"), json + "\n")?;
    Ok(summary)
}

pub fn build_dataset(
    sessions: &[SessionManifest],
    candidates: &[BlinkCandidate],
    decisions: &[DecisionRecord],
    output_dir: &Path,
    adapter: &dyn LandmarkAdapter,
    options: &DatasetOptions,
) -> Result<DatasetSummary, LabelerError> {
    let plan = plan_dataset(sessions, candidates, decisions, options)?;
    write_dataset(&plan, sessions, output_dir, adapter, options.pad)
}

/// Frame offsets of a blink sample treated as closed-eye training examples.
pub const BLINK_TRAINING_OFFSETS: std::ops::RangeInclusive<u64> =
    (HALF_WINDOW - 1)..=(HALF_WINDOW + 1);

/// Per-frame training crops from a written dataset, RGB stream only.
/// Blink samples contribute their three central frames as closed eyes;
/// no-blink samples contribute every frame as open eyes.
pub fn load_training_items(
    dataset_dir: &Path,
) -> Result<Vec<crate::classifier::TrainingItem>, LabelerError> {
    let mut items = Vec::new();
    for label in [SampleLabel::Blink, SampleLabel::NoBlink] {
        let root = dataset_dir.join(label.as_str());
        if !root.is_dir() {
            continue;
        }
        let mut ids: Vec<PathBuf> = fs::read_dir(&root)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        ids.sort();
        for dir in ids {
            let group = dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            let rgb = dir.join(StreamKind::Rgb.as_str());
            if !rgb.is_dir() {
                continue;
            }
            for k in 0..WINDOW_LEN {
                if label == SampleLabel::Blink && !BLINK_TRAINING_OFFSETS.contains(&k) {
                    continue;
                }
                for side in [eyes::EyeSide::Left, eyes::EyeSide::Right] {
                    let path = rgb.join(format!("{}_eye_{k:02}.png", side.as_str()));
                    let img = image::open(&path).map_err(EyeError::from)?.to_rgb8();
                    items.push(crate::classifier::TrainingItem {
                        crop: eyes::EyeCrop::from_image(side, &img, None)?,
                        label: label == SampleLabel::Blink,
                        group: group.clone(),
                    });
                }
            }
        }
    }
    Ok(items)
}
