//! Windowed attention, blink rate, normalization and their correlation.

use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{BlinkModel, ClassifierError};
use crate::eyes::{self, EyeError, Frame, LandmarkAdapter};
use crate::ingest::EegSample;
use crate::labeler::{BlinkCandidate, CandidateStatus};
use crate::scoring::{detect_events, BlinkEvent, DEFAULT_MIN_GAP};

pub const ATTENTION_WINDOW: f64 = 20.0;
pub const ATTENTION_SLIDE: f64 = 5.0;
pub const BPM_WINDOW: f64 = 5.0;
pub const BPM_SLIDE: f64 = 5.0;
/// Each EEG reading covers one second.
pub const EEG_PERIOD: f64 = 1.0;

#[derive(Debug, Error)]
pub enum AttentionError {
    #[error("EEG trace is empty")]
    EmptyTrace,
    #[error("window {window} s and slide {slide} s must satisfy window >= slide > 0")]
    InvalidWindow { window: f64, slide: f64 },
    #[error("window of {window} s is longer than the {trace} s trace")]
    WindowLongerThanTrace { window: f64, trace: f64 },
    #[error("only {points} overlapping points, need at least 3")]
    InsufficientOverlap { points: usize },
    #[error("a series is constant over the overlap; correlation is undefined")]
    ZeroVariance,
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesKind {
    Attention,
    BlinkRate,
    BlinkRateGroundTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub kind: SeriesKind,
}

impl TimeSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Value at the sample nearest to `t` (earlier sample on ties).
    pub fn nearest(&self, t: f64) -> Option<f64> {
        let i = self.times.partition_point(|&x| x < t);
        let candidates = [i.checked_sub(1), (i < self.len()).then_some(i)];
        candidates
            .into_iter()
            .flatten()
            .min_by(|&a, &b| {
                (self.times[a] - t)
                    .abs()
                    .total_cmp(&(self.times[b] - t).abs())
            })
            .map(|k| self.values[k])
    }

    fn spacing(&self) -> f64 {
        if self.len() < 2 {
            return 0.0;
        }
        (self.times[self.len() - 1] - self.times[0]) / (self.len() - 1) as f64
    }
}

fn check_window(window: f64, slide: f64) -> Result<(), AttentionError> {
    if !(slide > 0.0 && window >= slide && window.is_finite()) {
        return Err(AttentionError::InvalidWindow { window, slide });
    }
    Ok(())
}

/// Mean attention over `[t, t + window)` for `t = 0, slide, 2·slide, ...`
/// while the window fits inside the trace. Windows without readings are skipped.
pub fn attention_series(
    eeg: &[EegSample],
    window: f64,
    slide: f64,
) -> Result<TimeSeries, AttentionError> {
    let last = eeg.last().ok_or(AttentionError::EmptyTrace)?;
    check_window(window, slide)?;
    let trace_end = last.t + EEG_PERIOD;
    if window > trace_end {
        return Err(AttentionError::WindowLongerThanTrace {
            window,
            trace: trace_end,
        });
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut k = 0u64;
    loop {
        let t = k as f64 * slide;
        if t + window > trace_end {
            break;
        }
        let lo = eeg.partition_point(|s| s.t < t);
        let hi = eeg.partition_point(|s| s.t < t + window);
        if hi > lo {
            let sum: f64 = eeg[lo..hi].iter().map(|s| s.attention).sum();
            times.push(t);
            values.push(sum / (hi - lo) as f64);
        }
        k += 1;
    }
    Ok(TimeSeries {
        times,
        values,
        kind: SeriesKind::Attention,
    })
}

/// Blinks per minute: events starting in `[t, t + window)`, times `60 / window`,
/// for `t = 0, slide, ...` while `t + window <= duration`.
pub fn blink_rate_series(
    events: &[BlinkEvent],
    fps: f64,
    window: f64,
    slide: f64,
    duration: f64,
) -> Result<TimeSeries, AttentionError> {
    check_window(window, slide)?;
    let mut starts: Vec<f64> = events.iter().map(|e| e.start_frame as f64 / fps).collect();
    starts.sort_by(f64::total_cmp);
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut k = 0u64;
    loop {
        let t = k as f64 * slide;
        if t + window > duration {
            break;
        }
        let count =
            starts.partition_point(|&s| s < t + window) - starts.partition_point(|&s| s < t);
        times.push(t);
        values.push(count as f64 * 60.0 / window);
        k += 1;
    }
    Ok(TimeSeries {
        times,
        values,
        kind: SeriesKind::BlinkRate,
    })
}

/// Rescales to [0, 1]; a constant series maps to zeros.
pub fn minmax_normalize(series: &TimeSeries) -> TimeSeries {
    let min = series.values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = series
        .values
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    let values = series
        .values
        .iter()
        .map(|&v| {
            if range > 0.0 {
                ((v - min) / range).clamp(0.0, 1.0)
            } else {
                0.0
            }
        })
        .collect();
    TimeSeries {
        times: series.times.clone(),
        values,
        kind: series.kind,
    }
}

/// Pairs the two series on the coarser one's time grid (the first on ties),
/// restricted to where both have data, matching by nearest time.
pub fn align(a: &TimeSeries, b: &TimeSeries) -> Vec<(f64, f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let a_is_grid = a.spacing() >= b.spacing();
    let (grid, other) = if a_is_grid { (a, b) } else { (b, a) };
    let lo = a.times[0].max(b.times[0]);
    let hi = a.times[a.len() - 1].min(b.times[b.len() - 1]);
    grid.times
        .iter()
        .zip(&grid.values)
        .filter(|(&t, _)| t >= lo && t <= hi)
        .map(|(&t, &g)| {
            let o = other.nearest(t).expect("non-empty series");
            if a_is_grid {
                (t, g, o)
            } else {
                (t, o, g)
            }
        })
        .collect()
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, AttentionError> {
    let n = x.len().min(y.len());
    if n < 3 {
        return Err(AttentionError::InsufficientOverlap { points: n });
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (dx, dy) = (x[i] - mx, y[i] - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(AttentionError::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson correlation after [`align`].
pub fn correlate(a: &TimeSeries, b: &TimeSeries) -> Result<f64, AttentionError> {
    let pairs = align(a, b);
    let x: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let y: Vec<f64> = pairs.iter().map(|p| p.2).collect();
    pearson(&x, &y)
}

/// Accepted candidates as one-frame events at their centre frame.
pub fn candidate_events(candidates: &[BlinkCandidate]) -> Vec<BlinkEvent> {
    let mut events: Vec<BlinkEvent> = candidates
        .iter()
        .filter(|c| c.status == CandidateStatus::Accepted)
        .map(|c| BlinkEvent {
            start_frame: c.center_frame,
            end_frame: c.center_frame,
            peak_score: 1.0,
            long_closure: false,
        })
        .collect();
    events.sort_by_key(|e| e.start_frame);
    events
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameScores {
    /// Mean of the two eye scores per frame; 0 where eyes could not be found.
    pub scores: Vec<f64>,
    pub failed_frames: usize,
}

/// Scores every frame supplied by `load` (indices `0..frame_count`).
pub fn score_frames_with<F>(
    frame_count: u64,
    load: F,
    model: &BlinkModel,
    adapter: &dyn LandmarkAdapter,
    pad: f64,
) -> Result<FrameScores, AttentionError>
where
    F: Fn(u64) -> Result<Frame, EyeError> + Sync,
{
    const FRAMES_PER_BATCH: u64 = 32;
    let batches: Vec<u64> = (0..frame_count)
        .step_by(FRAMES_PER_BATCH as usize)
        .collect();
    let per_batch: Vec<Result<Vec<Option<f64>>, ClassifierError>> = batches
        .into_par_iter()
        .map(|start| {
            let end = (start + FRAMES_PER_BATCH).min(frame_count);
            let mut found = Vec::new();
            let mut crops = Vec::new();
            for f in start..end {
                match load(f).and_then(|frame| eyes::extract_eyes(adapter, &frame, pad)) {
                    Ok(p) => {
                        found.push(true);
                        crops.push(p.left);
                        crops.push(p.right);
                    }
                    Err(e) => {
                        log::debug!("frame {f}: {e}");
                        found.push(false);
                    }
                }
            }
            let scores = model.predict(&crops)?;
            let mut pairs = scores.chunks_exact(2).map(|s| (s[0] + s[1]) / 2.0);
            Ok(found
                .into_iter()
                .map(|ok| if ok { pairs.next() } else { None })
                .collect())
        })
        .collect();
    let mut per_frame = Vec::with_capacity(frame_count as usize);
    for batch in per_batch {
        per_frame.extend(batch?);
    }
    let mut out = FrameScores::default();
    for r in per_frame {
        match r {
            Some(s) => out.scores.push(s),
            None => {
                out.scores.push(0.0);
                out.failed_frames += 1;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisParams {
    pub attention_window: f64,
    pub attention_slide: f64,
    pub bpm_window: f64,
    pub bpm_slide: f64,
    pub min_gap_frames: u64,
}

impl Default for AnalysisParams {
    fn default() -> Self {
        Self {
            attention_window: ATTENTION_WINDOW,
            attention_slide: ATTENTION_SLIDE,
            bpm_window: BPM_WINDOW,
            bpm_slide: BPM_SLIDE,
            min_gap_frames: DEFAULT_MIN_GAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: Option<f64>,
    /// Why `r` is missing.
    pub note: Option<String>,
}

impl From<Result<f64, AttentionError>> for Correlation {
    fn from(r: Result<f64, AttentionError>) -> Self {
        match r {
            Ok(r) => Self {
                r: Some(r),
                note: None,
            },
            Err(e) => Self {
                r: None,
                note: Some(e.to_string()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionAnalysis {
    pub session_id: String,
    pub attention: TimeSeries,
    pub bpm_estimated: TimeSeries,
    pub bpm_ground_truth: TimeSeries,
    pub estimated_events: Vec<BlinkEvent>,
    pub ground_truth_events: usize,
    pub failed_frames: usize,
    /// Attention vs estimated blink rate.
    pub correlation: Correlation,
    /// Attention vs ground-truth blink rate.
    pub correlation_ground_truth: Correlation,
    /// Mean |estimated − ground-truth| bpm over common windows.
    pub mean_abs_bpm_difference: f64,
}

/// Detects blink events in the frame scores and relates both blink rates to attention.
pub fn analyze_session(
    session_id: &str,
    eeg: &[EegSample],
    frame_scores: &FrameScores,
    fps: f64,
    ground_truth: &[BlinkEvent],
    threshold: f64,
    params: &AnalysisParams,
) -> Result<SessionAnalysis, AttentionError> {
    let attention = attention_series(eeg, params.attention_window, params.attention_slide)?;
    let events = detect_events(&frame_scores.scores, threshold, params.min_gap_frames);
    let duration = frame_scores.scores.len() as f64 / fps;
    let bpm_estimated =
        blink_rate_series(&events, fps, params.bpm_window, params.bpm_slide, duration)?;
    let mut bpm_ground_truth = blink_rate_series(
        ground_truth,
        fps,
        params.bpm_window,
        params.bpm_slide,
        duration,
    )?;
    bpm_ground_truth.kind = SeriesKind::BlinkRateGroundTruth;

    let diffs: Vec<f64> = bpm_estimated
        .values
        .iter()
        .zip(&bpm_ground_truth.values)
        .map(|(a, b)| (a - b).abs())
        .collect();
    let mean_abs_bpm_difference = if diffs.is_empty() {
        0.0
    } else {
        diffs.iter().sum::<f64>() / diffs.len() as f64
    };

    let att_norm = minmax_normalize(&attention);
    Ok(SessionAnalysis {
        session_id: session_id.to_string(),
        correlation: correlate(&att_norm, &minmax_normalize(&bpm_estimated)).into(),
        correlation_ground_truth: correlate(&att_norm, &minmax_normalize(&bpm_ground_truth)).into(),
        attention,
        bpm_estimated,
        bpm_ground_truth,
        estimated_events: events,
        ground_truth_events: ground_truth.len(),
        failed_frames: frame_scores.failed_frames,
        mean_abs_bpm_difference,
    })
}

/// Rows `(t, attention_norm, bpm_est_norm, bpm_gt_norm)` on the attention grid.
pub fn normalized_rows(a: &SessionAnalysis) -> Vec<[f64; 4]> {
    let att = minmax_normalize(&a.attention);
    let est = minmax_normalize(&a.bpm_estimated);
    let gt = minmax_normalize(&a.bpm_ground_truth);
    let est_rows = align(&att, &est);
    let gt_rows = align(&att, &gt);
    est_rows
        .iter()
        .zip(&gt_rows)
        .map(|(e, g)| [e.0, e.1, e.2, g.2])
        .collect()
}

/// Writes `<session_id>.csv` per session, `summary.json` and `attention.png`.
pub fn write_attention_report(
    analyses: &[SessionAnalysis],
    params: &AnalysisParams,
    output_dir: &Path,
) -> Result<(), AttentionError> {
    fs::create_dir_all(output_dir)?;
    let mut panels = Vec::with_capacity(analyses.len());
    for a in analyses {
        let rows = normalized_rows(a);
        let mut csv = String::from("t,attention_norm,bpm_est_norm,bpm_gt_norm\n");
        for r in &rows {
            csv.push_str(&format!("{},{:.6},{:.6},{:.6}\n", r[0], r[1], r[2], r[3]));
        }
        fs::write(output_dir.join(format!("{}.csv", a.session_id)), csv)?;
        panels.push(rows);
    }
    let sessions: Vec<serde_json::Value> = analyses
        .iter()
        .map(|a| {
            let notes: Vec<String> = [&a.correlation.note, &a.correlation_ground_truth.note]
                .into_iter()
                .flatten()
                .cloned()
                .collect();
            serde_json::json!({
                "session_id": a.session_id,
                "pearson_r_attention_bpm_estimated": a.correlation.r,
                "pearson_r_attention_bpm_ground_truth": a.correlation_ground_truth.r,
                "notes": notes,
                "estimated_events": a.estimated_events.len(),
                "long_closures": a.estimated_events.iter().filter(|e| e.long_closure).count(),
                "ground_truth_events": a.ground_truth_events,
                "failed_frames": a.failed_frames,
                "mean_abs_bpm_difference": a.mean_abs_bpm_difference,
            })
        })
        .collect();
    let summary = serde_json::json!({ "params": params, "sessions": sessions });
    fs::write(
        output_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n",
    )?;
    plot_panels(&panels).save(output_dir.join("attention.png"))?;
    Ok(())
}

pub const PANEL_WIDTH: u32 = 800;
pub const PANEL_HEIGHT: u32 = 180;
const MARGIN: u32 = 20;
/// Curve colours: attention, estimated bpm, ground-truth bpm.
pub const CURVE_COLORS: [[u8; 3]; 3] = [[31, 119, 180], [214, 39, 40], [44, 160, 44]];

fn draw_line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// One panel per session stacked vertically, each with the three
/// normalized curves over a shared [0, 1] axis.
pub fn plot_panels(panels: &[Vec<[f64; 4]>]) -> RgbImage {
    let n = panels.len().max(1) as u32;
    let mut img = RgbImage::from_pixel(PANEL_WIDTH, PANEL_HEIGHT * n, Rgb([255, 255, 255]));
    let grey = Rgb([200, 200, 200]);
    let (pw, ph) = (
        (PANEL_WIDTH - 2 * MARGIN) as f64,
        (PANEL_HEIGHT - 2 * MARGIN) as f64,
    );
    for (p, rows) in panels.iter().enumerate() {
        let top = p as u32 * PANEL_HEIGHT + MARGIN;
        let left = MARGIN;
        for frac in [0.0, 0.5, 1.0] {
            let y = top as i64 + ((1.0 - frac) * ph).round() as i64;
            draw_line(
                &mut img,
                (left as i64, y),
                ((left as f64 + pw) as i64, y),
                grey,
            );
        }
        draw_line(
            &mut img,
            (left as i64, top as i64),
            (left as i64, (top as f64 + ph) as i64),
            grey,
        );
        if rows.len() < 2 {
            continue;
        }
        let (t0, t1) = (rows[0][0], rows[rows.len() - 1][0]);
        let px = |t: f64| left as i64 + ((t - t0) / (t1 - t0) * pw).round() as i64;
        let py = |v: f64| top as i64 + ((1.0 - v) * ph).round() as i64;
        for (c, color) in CURVE_COLORS.iter().enumerate() {
            for w in rows.windows(2) {
                let a = (px(w[0][0]), py(w[0][c + 1]));
                let b = (px(w[1][0]), py(w[1][c + 1]));
                draw_line(&mut img, a, b, Rgb(*color));
                // second pass one pixel down thickens the stroke
                draw_line(&mut img, (a.0, a.1 + 1), (b.0, b.1 + 1), Rgb(*color));
            }
        }
    }
    img
}
