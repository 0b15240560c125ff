//! Synthetic recording sessions: an EEG trace with blink-strength pulses, a
//! frame-level ground truth of eye closures and (optionally) rendered frames.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, TimeZone, Utc};
use image::RgbImage;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::eye::{EyeState, SyntheticEyeSpec};
use super::face::{default_face_box, render_face};
use crate::ingest::{
    self, time_to_frame, EegSample, SessionManifest, StreamDescriptor, StreamKind,
};
use crate::labeler::{BlinkCandidate, Decision, DecisionRecord};

/// Blink durations are drawn uniformly from this inclusive frame range.
pub const MIN_BLINK_FRAMES: u64 = 3;
pub const MAX_BLINK_FRAMES: u64 = 13;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("blinks at {a} s and {b} s collide: {reason}")]
    OverlappingBlinks {
        a: f64,
        b: f64,
        reason: &'static str,
    },
    #[error("invalid session spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Ingest(#[from] ingest::IngestError),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Piecewise-linear attention over time, values in [0, 100].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionProfile {
    /// `(t, value)` knots, strictly increasing in `t`. Constant beyond the ends.
    pub knots: Vec<(f64, f64)>,
}

impl AttentionProfile {
    pub fn constant(value: f64) -> Self {
        Self {
            knots: vec![(0.0, value)],
        }
    }

    /// Segments of `spacing` seconds alternating between a low band
    /// `[10, 40]` and a high band `[60, 90]`. Each level holds for
    /// `PLATEAU` of its segment, then ramps to the next.
    pub fn alternating(duration: f64, spacing: f64, seed: u64) -> Self {
        const PLATEAU: f64 = 0.8;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut high = rng.gen_bool(0.5);
        let mut knots = Vec::new();
        let mut t = 0.0;
        while t <= duration + spacing {
            let v = if high {
                rng.gen_range(60.0..90.0)
            } else {
                rng.gen_range(10.0..40.0)
            };
            knots.push((t, v));
            knots.push((t + spacing * PLATEAU, v));
            high = !high;
            t += spacing;
        }
        Self { knots }
    }

    pub fn value_at(&self, t: f64) -> f64 {
        let k = &self.knots;
        match k.iter().position(|&(kt, _)| kt > t) {
            None => k.last().map_or(0.0, |p| p.1),
            Some(0) => k[0].1,
            Some(i) => {
                let (t0, v0) = k[i - 1];
                let (t1, v1) = k[i];
                v0 + (v1 - v0) * (t - t0) / (t1 - t0)
            }
        }
        .clamp(0.0, 100.0)
    }
}

/// Blink rate in blinks/minute implied by attention under a coupling in [-1, 1]:
/// `base · (1 + coupling · (2·attention/100 − 1))`, floored at 0.5 bpm.
pub fn coupled_rate(attention: f64, coupling: f64, base_bpm: f64) -> f64 {
    (base_bpm * (1.0 + coupling * (2.0 * attention / 100.0 - 1.0))).max(0.5)
}

/// Minimum spacing of generated blinks; keeps their 1 Hz EEG pulses in non-adjacent seconds.
pub const MIN_BLINK_INTERVAL: f64 = 2.0;

/// Blink times from an integrate-and-fire process driven by [`coupled_rate`]:
/// phase accumulates `rate/60` per second and a blink fires each time it
/// crosses a jittered unit threshold. Counts track the rate closely, unlike
/// a Poisson draw.
pub fn coupled_blink_times(
    duration: f64,
    profile: &AttentionProfile,
    coupling: f64,
    base_bpm: f64,
    seed: u64,
) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = 0.05;
    let margin = 1.0;
    let mut phase: f64 = rng.gen_range(0.0..1.0);
    let mut threshold: f64 = rng.gen_range(0.9..1.1);
    let mut last = f64::NEG_INFINITY;
    let mut times = Vec::new();
    let mut t = margin;
    while t < duration - margin {
        phase += coupled_rate(profile.value_at(t), coupling, base_bpm) / 60.0 * dt;
        if phase >= threshold && t - last >= MIN_BLINK_INTERVAL {
            times.push((t * 100.0).round() / 100.0);
            last = t;
            phase -= threshold;
            threshold = rng.gen_range(0.9..1.1);
        }
        t += dt;
    }
    times
}

/// `count` blink times drawn uniformly over `[1, duration − 1]` seconds,
/// sorted, at least [`MIN_BLINK_INTERVAL`] apart.
pub fn random_blink_times(count: usize, duration: f64, seed: u64) -> Result<Vec<f64>, SynthError> {
    // one extra centisecond survives the rounding below
    let gap = MIN_BLINK_INTERVAL + 0.01;
    let span = duration - 2.0;
    let slack = span - gap * count.saturating_sub(1) as f64;
    if count > 0 && (span <= 0.0 || slack < 0.0) {
        return Err(SynthError::InvalidSpec(format!(
            "{count} blinks at least {MIN_BLINK_INTERVAL} s apart do not fit in {duration} s"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut offsets: Vec<f64> = (0..count).map(|_| rng.gen_range(0.0..=slack)).collect();
    offsets.sort_by(f64::total_cmp);
    Ok(offsets
        .into_iter()
        .enumerate()
        .map(|(k, u)| {
            let t = 1.0 + u + gap * k as f64;
            (t * 100.0).floor() / 100.0
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSessionSpec {
    pub session_id: String,
    pub duration: f64,
    pub blink_times: Vec<f64>,
    pub attention_profile: AttentionProfile,
    /// Recorded for provenance; `blink_times` already reflect it when built by [`Self::coupled`].
    pub coupling: f64,
    pub seed: u64,
    pub fps: f64,
    pub resolution: (u32, u32),
    pub streams: Vec<StreamKind>,
    /// Probability that a non-blink second carries a weak spurious blink-strength reading.
    pub spurious_rate: f64,
    /// Standard deviation of noise added to the attention profile.
    pub attention_noise: f64,
}

impl SyntheticSessionSpec {
    pub fn new(session_id: &str, duration: f64, blink_times: Vec<f64>, seed: u64) -> Self {
        Self {
            session_id: session_id.into(),
            duration,
            blink_times,
            attention_profile: AttentionProfile::constant(50.0),
            coupling: 0.0,
            seed,
            fps: ingest::DEFAULT_FPS,
            resolution: (320, 240),
            streams: vec![StreamKind::Rgb],
            spurious_rate: 0.1,
            attention_noise: 3.0,
        }
    }

    /// Blinks drawn from an alternating attention profile under `coupling`.
    pub fn coupled(
        session_id: &str,
        duration: f64,
        coupling: f64,
        base_bpm: f64,
        seed: u64,
    ) -> Self {
        let profile = AttentionProfile::alternating(duration, 40.0, seed ^ 0xA77E);
        let blinks = coupled_blink_times(duration, &profile, coupling, base_bpm, seed ^ 0xB11C);
        Self {
            attention_profile: profile,
            coupling,
            ..Self::new(session_id, duration, blinks, seed)
        }
    }
}

/// A closure run in frame indices, inclusive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthEvent {
    pub event_id: String,
    pub start_frame: u64,
    pub end_frame: u64,
}

impl GroundTruthEvent {
    pub fn duration(&self) -> u64 {
        self.end_frame - self.start_frame + 1
    }

    pub fn center(&self) -> f64 {
        (self.start_frame + self.end_frame) as f64 / 2.0
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSession {
    pub spec: SyntheticSessionSpec,
    pub eeg: Vec<EegSample>,
    pub events: Vec<GroundTruthEvent>,
    pub frame_count: u64,
    closed: Vec<bool>,
}

fn sub_seed(seed: u64, tag: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.gen()
}

pub fn gen_session(spec: &SyntheticSessionSpec) -> Result<SyntheticSession, SynthError> {
    if !(spec.duration > 0.0) || !(spec.fps > 0.0) {
        return Err(SynthError::InvalidSpec(
            "duration and fps must be positive".into(),
        ));
    }
    let frame_count = (spec.duration * spec.fps).round() as u64;
    if frame_count < MAX_BLINK_FRAMES {
        return Err(SynthError::InvalidSpec(
            "session shorter than one blink".into(),
        ));
    }
    if let Some(&t) = spec
        .blink_times
        .iter()
        .find(|&&t| !(0.0..spec.duration).contains(&t))
    {
        return Err(SynthError::InvalidSpec(format!(
            "blink time {t} outside [0, {})",
            spec.duration
        )));
    }
    let mut times = spec.blink_times.clone();
    times.sort_by(f64::total_cmp);

    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(spec.seed, 1));
    let mut events: Vec<GroundTruthEvent> = Vec::with_capacity(times.len());
    for (i, &t) in times.iter().enumerate() {
        let frames = rng.gen_range(MIN_BLINK_FRAMES..=MAX_BLINK_FRAMES);
        let center = time_to_frame(t, spec.fps)?.min(frame_count - 1);
        let start = center
            .saturating_sub((frames - 1) / 2)
            .min(frame_count - frames);
        let ev = GroundTruthEvent {
            event_id: format!("e{:04}", i + 1),
            start_frame: start,
            end_frame: start + frames - 1,
        };
        if let Some(prev) = events.last() {
            if ev.start_frame <= prev.end_frame + 1 {
                return Err(SynthError::OverlappingBlinks {
                    a: times[i - 1],
                    b: t,
                    reason: "closure runs overlap or touch on the frame grid",
                });
            }
        }
        events.push(ev);
    }

    let seconds = spec.duration.floor() as usize;
    let mut pulse: Vec<Option<usize>> = vec![None; seconds];
    for (i, &t) in times.iter().enumerate() {
        let s = (t.round() as usize).min(seconds.saturating_sub(1));
        if let Some(j) = pulse[s] {
            return Err(SynthError::OverlappingBlinks {
                a: times[j],
                b: t,
                reason: "both fall on the same EEG sample",
            });
        }
        pulse[s] = Some(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(spec.seed, 2));
    let attention_noise =
        Normal::new(0.0, spec.attention_noise.max(0.0)).expect("finite attention noise");
    let eeg = (0..seconds)
        .map(|s| {
            let t = s as f64;
            let mut band = || (rng.gen_range(1.0..100.0f64) * 100.0).round() / 100.0;
            let (alpha, beta, gamma, delta, theta) = (band(), band(), band(), band(), band());
            let blink_strength = if pulse[s].is_some() {
                rng.gen_range(40..=100) as f64
            } else if rng.gen_bool(spec.spurious_rate.clamp(0.0, 1.0)) {
                rng.gen_range(5..=30) as f64
            } else {
                0.0
            };
            let noise = if spec.attention_noise > 0.0 {
                attention_noise.sample(&mut rng)
            } else {
                0.0
            };
            let attention = ((spec.attention_profile.value_at(t) + noise).clamp(0.0, 100.0) * 10.0)
                .round()
                / 10.0;
            EegSample {
                t,
                alpha,
                beta,
                gamma,
                delta,
                theta,
                blink_strength,
                attention,
            }
        })
        .collect();

    let mut closed = vec![false; frame_count as usize];
    for ev in &events {
        for f in ev.start_frame..=ev.end_frame {
            closed[f as usize] = true;
        }
    }
    Ok(SyntheticSession {
        spec: spec.clone(),
        eeg,
        events,
        frame_count,
        closed,
    })
}

impl SyntheticSession {
    pub fn is_closed(&self, frame: u64) -> bool {
        self.closed.get(frame as usize).copied().unwrap_or(false)
    }

    /// Eye appearance for one frame. Gaze drifts slowly; noise is per frame.
    pub fn eye_spec(&self, frame: u64, side: u8) -> SyntheticEyeSpec {
        let state = if self.is_closed(frame) {
            EyeState::Closed
        } else {
            EyeState::Open
        };
        let t = frame as f64 / self.spec.fps;
        let phase = (self.spec.seed % 1000) as f64;
        SyntheticEyeSpec {
            state,
            iris_position: (
                (0.21 * t + phase).sin() * 0.8,
                (0.13 * t + 0.5 * phase).sin() * 0.5,
            ),
            noise_level: 0.03,
            illumination: 0.9 + 0.1 * (0.05 * t + phase).sin(),
            seed: sub_seed(self.spec.seed, 1_000 + 2 * frame + side as u64),
        }
    }

    pub fn render_frame(&self, frame: u64) -> RgbImage {
        let (w, h) = self.spec.resolution;
        render_face(
            w,
            h,
            default_face_box(w, h),
            &self.eye_spec(frame, 0),
            &self.eye_spec(frame, 1),
        )
    }

    pub fn manifest(&self, dir: &Path) -> SessionManifest {
        SessionManifest {
            session_id: self.spec.session_id.clone(),
            subject_id: format!("synthetic-{}", self.spec.seed),
            wears_glasses: false,
            streams: self
                .spec
                .streams
                .iter()
                .map(|&kind| StreamDescriptor {
                    kind,
                    path: dir.join(stream_dir(kind)),
                    frame_count: self.frame_count,
                })
                .collect(),
            eeg_path: dir.join("eeg.csv"),
            fps: self.spec.fps,
            resolution: self.spec.resolution,
            eeg_offset: 0.0,
        }
    }

    /// Writes `session.json`, `eeg.csv`, `ground_truth.csv` and, when
    /// `render_frames` is set, one PNG per frame and stream. NIR streams are
    /// the luma of the RGB render. Returns the manifest path.
    pub fn write(&self, dir: &Path, render_frames: bool) -> Result<PathBuf, SynthError> {
        fs::create_dir_all(dir)?;
        ingest::write_eeg(&dir.join("eeg.csv"), &self.eeg)?;
        write_ground_truth(&dir.join("ground_truth.csv"), &self.events)?;

        let mut manifest = self.manifest(Path::new(""));
        manifest.eeg_path = PathBuf::from("eeg.csv");
        let path = dir.join("session.json");
        fs::write(
            &path,
            serde_json::to_string_pretty(&manifest.to_json()).expect("manifest serializes") + "\n",
        )?;

        if render_frames {
            for &kind in &self.spec.streams {
                fs::create_dir_all(dir.join(stream_dir(kind)))?;
            }
            for f in 0..self.frame_count {
                let rgb = self.render_frame(f);
                for &kind in &self.spec.streams {
                    let out = dir.join(stream_dir(kind)).join(ingest::frame_file_name(f));
                    match kind {
                        StreamKind::Rgb => rgb.save(&out)?,
                        _ => image::DynamicImage::ImageRgb8(rgb.clone())
                            .to_luma8()
                            .save(&out)?,
                    }
                }
            }
        }
        Ok(path)
    }
}

pub fn stream_dir(kind: StreamKind) -> &'static str {
    match kind {
        StreamKind::Rgb => "rgb",
        StreamKind::NirLeft => "nir_left",
        StreamKind::NirRight => "nir_right",
    }
}

pub fn write_ground_truth(path: &Path, events: &[GroundTruthEvent]) -> Result<(), SynthError> {
    let mut out = String::from("event_id,start_frame,end_frame\n");
    for e in events {
        out.push_str(&format!(
            "{},{},{}\n",
            e.event_id, e.start_frame, e.end_frame
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<GroundTruthEvent>, SynthError> {
    let mut reader =
        csv::Reader::from_path(path).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
    reader
        .deserialize()
        .collect::<Result<Vec<GroundTruthEvent>, _>>()
        .map_err(|e| SynthError::InvalidSpec(e.to_string()))
}

/// A reviewer that accepts exactly the candidates lying within
/// `tolerance_frames` of a ground-truth closure centre.
pub fn simulate_review(
    candidates: &[BlinkCandidate],
    events: &[GroundTruthEvent],
    tolerance_frames: f64,
    reviewer: &str,
    decided_at: DateTime<Utc>,
) -> Vec<DecisionRecord> {
    candidates
        .iter()
        .map(|c| {
            let hit = events
                .iter()
                .any(|e| (c.center_frame as f64 - e.center()).abs() <= tolerance_frames);
            DecisionRecord {
                candidate_id: c.candidate_id.clone(),
                decision: if hit {
                    Decision::Accept
                } else {
                    Decision::Reject
                },
                reviewer: reviewer.to_string(),
                decided_at,
            }
        })
        .collect()
}

/// Fixed timestamp for reproducible simulated reviews.
pub fn epoch_timestamp() -> DateTime<Utc> {
    Utc.timestamp_opt(0, 0).single().expect("valid epoch")
}
