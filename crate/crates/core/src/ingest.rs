//! Session ingestion: manifests, EEG traces and the EEG↔video clock mapping.
//!
//! The EEG band reports once per second; the cameras run at `fps` (30 by
//! default). Everything downstream works on a single clock whose origin is
//! the first video frame, so EEG timestamps are shifted by the manifest's
//! `eeg_offset` on load.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const DEFAULT_FPS: f64 = 30.0;
pub const DEFAULT_RESOLUTION: (u32, u32) = (1280, 720);

/// Header of the EEG trace CSV, in column order.
pub const EEG_HEADER: [&str; 8] = [
    "t",
    "alpha",
    "beta",
    "gamma",
    "delta",
    "theta",
    "blink_strength",
    "attention",
];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("malformed manifest field `{field}`: {reason}")]
    MalformedManifest { field: String, reason: String },
    #[error("manifest invariant violated: {0}")]
    InvariantViolation(String),
    #[error("malformed EEG trace at line {line}: {reason}")]
    MalformedTrace { line: usize, reason: String },
    #[error("EEG timestamps not strictly increasing at line {line} (t = {t} after {prev})")]
    NonMonotonicTimestamps { line: usize, t: f64, prev: f64 },
    #[error("negative {band} power {value} at line {line}")]
    NegativeBandPower {
        line: usize,
        band: &'static str,
        value: f64,
    },
    #[error("negative time {0}")]
    NegativeTime(f64),
    #[error("frame {index} outside {kind} stream of {frame_count} frames")]
    FrameOutOfRange {
        kind: StreamKind,
        index: u64,
        frame_count: u64,
    },
    #[error("no {0} stream in session")]
    MissingStream(StreamKind),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StreamKind {
    #[serde(rename = "RGB")]
    Rgb,
    #[serde(rename = "NIR_LEFT")]
    NirLeft,
    #[serde(rename = "NIR_RIGHT")]
    NirRight,
}

impl StreamKind {
    pub const ALL: [StreamKind; 3] = [StreamKind::Rgb, StreamKind::NirLeft, StreamKind::NirRight];

    pub fn as_str(self) -> &'static str {
        match self {
            StreamKind::Rgb => "RGB",
            StreamKind::NirLeft => "NIR_LEFT",
            StreamKind::NirRight => "NIR_RIGHT",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for StreamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamDescriptor {
    pub kind: StreamKind,
    /// Directory of `%06d.png` frames.
    pub path: PathBuf,
    pub frame_count: u64,
}

impl StreamDescriptor {
    pub fn frame_path(&self, index: u64) -> PathBuf {
        self.path.join(frame_file_name(index))
    }
}

pub fn frame_file_name(index: u64) -> String {
    format!("{index:06}.png")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionManifest {
    pub session_id: String,
    pub subject_id: String,
    pub wears_glasses: bool,
    pub streams: Vec<StreamDescriptor>,
    pub eeg_path: PathBuf,
    pub fps: f64,
    pub resolution: (u32, u32),
    /// Time of the first video frame on the EEG clock, in seconds.
    #[serde(default)]
    pub eeg_offset: f64,
}

impl SessionManifest {
    pub fn stream(&self, kind: StreamKind) -> Option<&StreamDescriptor> {
        self.streams.iter().find(|s| s.kind == kind)
    }

    pub fn stream_kinds(&self) -> Vec<StreamKind> {
        self.streams.iter().map(|s| s.kind).collect()
    }

    /// Smallest frame count across all streams; windows must fit every stream.
    pub fn common_frame_count(&self) -> u64 {
        self.streams
            .iter()
            .map(|s| s.frame_count)
            .min()
            .unwrap_or(0)
    }

    pub fn frame_ref(&self, kind: StreamKind, index: u64) -> Result<FrameRef, IngestError> {
        let stream = self.stream(kind).ok_or(IngestError::MissingStream(kind))?;
        if index >= stream.frame_count {
            return Err(IngestError::FrameOutOfRange {
                kind,
                index,
                frame_count: stream.frame_count,
            });
        }
        Ok(FrameRef {
            stream_kind: kind,
            frame_index: index,
        })
    }

    /// Loads the session's EEG trace, shifted onto the video clock.
    /// Samples that precede the first video frame are discarded.
    pub fn load_eeg(&self) -> Result<Vec<EegSample>, IngestError> {
        let mut samples = load_eeg(&self.eeg_path)?;
        if self.eeg_offset != 0.0 {
            for s in &mut samples {
                s.t -= self.eeg_offset;
            }
            samples.retain(|s| s.t >= 0.0);
        }
        Ok(samples)
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if !(self.fps > 0.0) || !self.fps.is_finite() {
            return Err(IngestError::InvariantViolation(format!(
                "fps must be > 0, got {}",
                self.fps
            )));
        }
        if self.resolution.0 == 0 || self.resolution.1 == 0 {
            return Err(IngestError::InvariantViolation(format!(
                "resolution must be non-zero, got {:?}",
                self.resolution
            )));
        }
        for (i, s) in self.streams.iter().enumerate() {
            if self.streams[..i].iter().any(|o| o.kind == s.kind) {
                return Err(IngestError::InvariantViolation(format!(
                    "duplicate {} stream",
                    s.kind
                )));
            }
        }
        Ok(())
    }

    /// Serializes with paths written as given (callers decide relative vs absolute).
    pub fn to_json(&self) -> Value {
        serde_json::json!({
            "session_id": self.session_id,
            "subject_id": self.subject_id,
            "wears_glasses": self.wears_glasses,
            "fps": self.fps,
            "resolution": [self.resolution.0, self.resolution.1],
            "eeg_path": self.eeg_path,
            "eeg_offset": self.eeg_offset,
            "streams": self.streams.iter().map(|s| serde_json::json!({
                "kind": s.kind.as_str(),
                "path": s.path,
                "frame_count": s.frame_count,
            })).collect::<Vec<_>>(),
        })
    }
}

/// Position of one frame within a session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameRef {
    pub stream_kind: StreamKind,
    pub frame_index: u64,
}

/// One 1 Hz reading from the EEG band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EegSample {
    pub t: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub theta: f64,
    pub blink_strength: f64,
    pub attention: f64,
}

fn malformed(field: &str, reason: impl Into<String>) -> IngestError {
    IngestError::MalformedManifest {
        field: field.to_string(),
        reason: reason.into(),
    }
}

fn required<'a>(
    obj: &'a serde_json::Map<String, Value>,
    field: &str,
) -> Result<&'a Value, IngestError> {
    obj.get(field).ok_or_else(|| malformed(field, "missing"))
}

fn str_field(obj: &serde_json::Map<String, Value>, field: &str) -> Result<String, IngestError> {
    required(obj, field)?
        .as_str()
        .map(str::to_owned)
        .ok_or_else(|| malformed(field, "expected a string"))
}

/// Reads and validates a `session.json` manifest. Relative paths are
/// resolved against the manifest's directory.
pub fn load_session(manifest_path: &Path) -> Result<SessionManifest, IngestError> {
    if !manifest_path.is_file() {
        return Err(IngestError::MissingFile(manifest_path.to_path_buf()));
    }
    let text = fs::read_to_string(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    parse_manifest(&text, base)
}

pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<SessionManifest, IngestError> {
    let root: Value = serde_json::from_str(text).map_err(|e| malformed("<root>", e.to_string()))?;
    let obj = root
        .as_object()
        .ok_or_else(|| malformed("<root>", "expected a JSON object"))?;

    let session_id = str_field(obj, "session_id")?;
    let subject_id = str_field(obj, "subject_id")?;
    let wears_glasses = required(obj, "wears_glasses")?
        .as_bool()
        .ok_or_else(|| malformed("wears_glasses", "expected a boolean"))?;
    let eeg_path = base_dir.join(str_field(obj, "eeg_path")?);

    let fps = match obj.get("fps") {
        None => DEFAULT_FPS,
        Some(v) => v
            .as_f64()
            .ok_or_else(|| malformed("fps", "expected a number"))?,
    };
    let resolution = match obj.get("resolution") {
        None => DEFAULT_RESOLUTION,
        Some(v) => {
            let dims = v
                .as_array()
                .filter(|a| a.len() == 2)
                .and_then(|a| Some((a[0].as_u64()?, a[1].as_u64()?)))
                .ok_or_else(|| malformed("resolution", "expected [width, height]"))?;
            let w =
                u32::try_from(dims.0).map_err(|_| malformed("resolution", "width too large"))?;
            let h =
                u32::try_from(dims.1).map_err(|_| malformed("resolution", "height too large"))?;
            (w, h)
        }
    };
    let eeg_offset = match obj.get("eeg_offset") {
        None => 0.0,
        Some(v) => v
            .as_f64()
            .ok_or_else(|| malformed("eeg_offset", "expected a number"))?,
    };

    let raw_streams = required(obj, "streams")?
        .as_array()
        .ok_or_else(|| malformed("streams", "expected an array"))?;
    let mut streams = Vec::with_capacity(raw_streams.len());
    for (i, raw) in raw_streams.iter().enumerate() {
        let field = |name: &str| format!("streams[{i}].{name}");
        let s = raw
            .as_object()
            .ok_or_else(|| malformed(&format!("streams[{i}]"), "expected an object"))?;
        let kind_str = s
            .get("kind")
            .and_then(Value::as_str)
            .ok_or_else(|| malformed(&field("kind"), "missing or not a string"))?;
        let kind = StreamKind::parse(kind_str).ok_or_else(|| {
            IngestError::InvariantViolation(format!(
                "stream kind `{kind_str}` is not one of RGB, NIR_LEFT, NIR_RIGHT"
            ))
        })?;
        let path = s
            .get("path")
            .and_then(Value::as_str)
            .ok_or_else(|| malformed(&field("path"), "missing or not a string"))?;
        let frame_count = match s.get("frame_count") {
            None => return Err(malformed(&field("frame_count"), "missing")),
            Some(v) => match v.as_u64() {
                Some(n) => n,
                None if v.as_i64().is_some() => {
                    return Err(IngestError::InvariantViolation(format!(
                        "{} must be >= 0",
                        field("frame_count")
                    )))
                }
                None => return Err(malformed(&field("frame_count"), "expected an integer")),
            },
        };
        streams.push(StreamDescriptor {
            kind,
            path: base_dir.join(path),
            frame_count,
        });
    }

    let manifest = SessionManifest {
        session_id,
        subject_id,
        wears_glasses,
        streams,
        eeg_path,
        fps,
        resolution,
        eeg_offset,
    };
    manifest.validate()?;
    Ok(manifest)
}

#[derive(Debug, Deserialize)]
struct EegRow {
    t: f64,
    alpha: f64,
    beta: f64,
    gamma: f64,
    delta: f64,
    theta: f64,
    blink_strength: f64,
    attention: f64,
}

/// Reads an EEG trace CSV. An empty file (or header only) yields no samples.
pub fn load_eeg(path: &Path) -> Result<Vec<EegSample>, IngestError> {
    if !path.is_file() {
        return Err(IngestError::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path)?;
    parse_eeg(&bytes)
}

pub fn parse_eeg(bytes: &[u8]) -> Result<Vec<EegSample>, IngestError> {
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Ok(Vec::new());
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let headers = reader
        .headers()
        .map_err(|e| IngestError::MalformedTrace {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    if headers.iter().ne(EEG_HEADER.iter().copied()) {
        return Err(IngestError::MalformedTrace {
            line: 1,
            reason: format!("expected header `{}`", EEG_HEADER.join(",")),
        });
    }

    let mut samples: Vec<EegSample> = Vec::new();
    for (i, row) in reader.deserialize::<EegRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| IngestError::MalformedTrace {
            line,
            reason: e.to_string(),
        })?;
        if !row.t.is_finite() || row.t < 0.0 {
            return Err(IngestError::MalformedTrace {
                line,
                reason: format!("invalid timestamp {}", row.t),
            });
        }
        if let Some(prev) = samples.last() {
            if row.t <= prev.t {
                return Err(IngestError::NonMonotonicTimestamps {
                    line,
                    t: row.t,
                    prev: prev.t,
                });
            }
        }
        for (band, value) in [
            ("alpha", row.alpha),
            ("beta", row.beta),
            ("gamma", row.gamma),
            ("delta", row.delta),
            ("theta", row.theta),
        ] {
            if value < 0.0 || value.is_nan() {
                return Err(IngestError::NegativeBandPower { line, band, value });
            }
        }
        if row.blink_strength < 0.0 || row.blink_strength.is_nan() {
            return Err(IngestError::MalformedTrace {
                line,
                reason: format!("negative blink strength {}", row.blink_strength),
            });
        }
        let attention = if (0.0..=100.0).contains(&row.attention) {
            row.attention
        } else {
            log::warn!(
                "EEG line {line}: attention {} outside [0, 100], clipped",
                row.attention
            );
            if row.attention.is_nan() {
                0.0
            } else {
                row.attention.clamp(0.0, 100.0)
            }
        };
        samples.push(EegSample {
            t: row.t,
            alpha: row.alpha,
            beta: row.beta,
            gamma: row.gamma,
            delta: row.delta,
            theta: row.theta,
            blink_strength: row.blink_strength,
            attention,
        });
    }
    Ok(samples)
}

pub fn write_eeg(path: &Path, samples: &[EegSample]) -> Result<(), IngestError> {
    let mut out = String::with_capacity(64 * (samples.len() + 1));
    out.push_str(&EEG_HEADER.join(","));
    out.push('\n');
    for s in samples {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            s.t, s.alpha, s.beta, s.gamma, s.delta, s.theta, s.blink_strength, s.attention
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Nearest video frame for a time on the session clock (half away from zero).
pub fn time_to_frame(t: f64, fps: f64) -> Result<u64, IngestError> {
    if t < 0.0 || t.is_nan() {
        return Err(IngestError::NegativeTime(t));
    }
    assert!(fps > 0.0, "fps must be positive");
    Ok((t * fps).round() as u64)
}

pub fn frame_to_time(frame_index: u64, fps: f64) -> f64 {
    frame_index as f64 / fps
}

#[cfg(test)]
mod tests {
    use super::*;

    const MANIFEST: &str = r#"{
        "session_id": "s01", "subject_id": "u07", "wears_glasses": true,
        "fps": 30, "resolution": [1280, 720], "eeg_path": "eeg.csv",
        "streams": [
            {"kind": "RGB", "path": "rgb", "frame_count": 7200},
            {"kind": "NIR_LEFT", "path": "nir_l", "frame_count": 7200},
            {"kind": "NIR_RIGHT", "path": "nir_r", "frame_count": 7199}
        ]
    }"#;

    #[test]
    fn manifest_with_three_cameras() {
        let m = parse_manifest(MANIFEST, Path::new("/data/s01")).unwrap();
        assert_eq!(m.streams.len(), 3);
        assert_eq!(m.eeg_path, Path::new("/data/s01/eeg.csv"));
        assert_eq!(m.common_frame_count(), 7199);
        assert_eq!(m.resolution, (1280, 720));
    }

    #[test]
    fn zero_fps_is_invariant_violation() {
        let text = MANIFEST.replace("\"fps\": 30", "\"fps\": 0");
        assert!(matches!(
            parse_manifest(&text, Path::new(".")),
            Err(IngestError::InvariantViolation(_))
        ));
    }

    #[test]
    fn missing_eeg_path_names_the_field() {
        let text = MANIFEST.replace("\"eeg_path\": \"eeg.csv\",", "");
        match parse_manifest(&text, Path::new(".")) {
            Err(IngestError::MalformedManifest { field, .. }) => assert_eq!(field, "eeg_path"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_and_unknown_stream_kinds_rejected() {
        let dup = MANIFEST.replace("NIR_RIGHT", "NIR_LEFT");
        assert!(matches!(
            parse_manifest(&dup, Path::new(".")),
            Err(IngestError::InvariantViolation(_))
        ));
        let unknown = MANIFEST.replace("NIR_RIGHT", "DEPTH");
        assert!(matches!(
            parse_manifest(&unknown, Path::new(".")),
            Err(IngestError::InvariantViolation(_))
        ));
    }

    #[test]
    fn defaults_apply() {
        let text = MANIFEST.replace("\"fps\": 30, \"resolution\": [1280, 720],", "");
        let m = parse_manifest(&text, Path::new(".")).unwrap();
        assert_eq!(m.fps, DEFAULT_FPS);
        assert_eq!(m.resolution, DEFAULT_RESOLUTION);
    }

    #[test]
    fn missing_manifest_file() {
        assert!(matches!(
            load_session(Path::new("/nonexistent/session.json")),
            Err(IngestError::MissingFile(_))
        ));
    }

    fn eeg_csv(rows: &[(f64, f64, f64)]) -> String {
        let mut s = EEG_HEADER.join(",") + "\n";
        for (t, blink, att) in rows {
            s += &format!("{t},1,2,3,4,5,{blink},{att}\n");
        }
        s
    }

    #[test]
    fn four_minute_trace() {
        let rows: Vec<_> = (0..240).map(|t| (t as f64, 0.0, 50.0)).collect();
        let samples = parse_eeg(eeg_csv(&rows).as_bytes()).unwrap();
        assert_eq!(samples.len(), 240);
        assert_eq!(samples.last().unwrap().t - samples[0].t, 239.0);
    }

    #[test]
    fn empty_trace_is_valid() {
        assert!(parse_eeg(b"").unwrap().is_empty());
        assert!(parse_eeg(eeg_csv(&[]).as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn non_monotonic_timestamps() {
        let text = eeg_csv(&[(0.0, 0.0, 1.0), (2.0, 0.0, 1.0), (1.0, 0.0, 1.0)]);
        assert!(matches!(
            parse_eeg(text.as_bytes()),
            Err(IngestError::NonMonotonicTimestamps { line: 4, .. })
        ));
    }

    #[test]
    fn negative_band_power() {
        let text = EEG_HEADER.join(",") + "\n0,1,2,-3,4,5,0,50\n";
        assert!(matches!(
            parse_eeg(text.as_bytes()),
            Err(IngestError::NegativeBandPower { band: "gamma", .. })
        ));
    }

    #[test]
    fn attention_is_clipped_not_rejected() {
        let text = eeg_csv(&[(0.0, 0.0, 130.0), (1.0, 0.0, -4.0)]);
        let s = parse_eeg(text.as_bytes()).unwrap();
        assert_eq!(s[0].attention, 100.0);
        assert_eq!(s[1].attention, 0.0);
    }

    #[test]
    fn eeg_offset_moves_onto_video_clock() {
        let dir = tempfile::tempdir().unwrap();
        let rows: Vec<_> = (0..5).map(|t| (t as f64, 0.0, 50.0)).collect();
        fs::write(dir.path().join("eeg.csv"), eeg_csv(&rows)).unwrap();
        let text = MANIFEST.replace("\"fps\": 30,", "\"fps\": 30, \"eeg_offset\": 2.0,");
        let m = parse_manifest(&text, dir.path()).unwrap();
        let eeg = m.load_eeg().unwrap();
        assert_eq!(
            eeg.iter().map(|s| s.t).collect::<Vec<_>>(),
            vec![0.0, 1.0, 2.0]
        );
    }

    #[test]
    fn time_to_frame_examples() {
        assert_eq!(time_to_frame(0.0, 30.0).unwrap(), 0);
        assert_eq!(time_to_frame(2.5, 30.0).unwrap(), 75);
        assert_eq!(time_to_frame(0.0167, 30.0).unwrap(), 1);
        assert!(matches!(
            time_to_frame(-0.1, 30.0),
            Err(IngestError::NegativeTime(_))
        ));
    }

    #[test]
    fn half_frame_rounds_away_from_zero() {
        // 0.0167 s = 167/10000 s; 167 * 30 = 5010, and 2 * 5010 >= 10000 rounds up.
        let (num, den) = (167u64 * 30, 10_000u64);
        let exact = num / den + u64::from(2 * (num % den) >= den);
        assert_eq!(time_to_frame(0.0167, 30.0).unwrap(), exact);
        // exact half: 1/60 s at 30 fps is 0.5 frames
        assert_eq!(time_to_frame(0.5 / 30.0, 30.0).unwrap(), 1);
    }

    #[test]
    fn frame_round_trip_exhaustive() {
        assert_eq!(frame_to_time(0, 30.0), 0.0);
        assert_eq!(frame_to_time(75, 30.0), 2.5);
        for k in 0..=100_000u64 {
            assert_eq!(time_to_frame(frame_to_time(k, 30.0), 30.0).unwrap(), k);
        }
    }

    #[test]
    fn frame_ref_bounds() {
        let m = parse_manifest(MANIFEST, Path::new(".")).unwrap();
        assert!(m.frame_ref(StreamKind::Rgb, 7199).is_ok());
        assert!(matches!(
            m.frame_ref(StreamKind::NirRight, 7199),
            Err(IngestError::FrameOutOfRange { .. })
        ));
    }

    proptest::proptest! {
        #[test]
        fn time_to_frame_monotone(a in 0.0f64..1e4, b in 0.0f64..1e4) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            proptest::prop_assert!(time_to_frame(lo, 30.0).unwrap() <= time_to_frame(hi, 30.0).unwrap());
        }

        #[test]
        fn eeg_round_trip_preserves_rows(n in 0usize..50, seed in 0u64..1000) {
            let samples: Vec<EegSample> = (0..n).map(|i| EegSample {
                t: i as f64, alpha: (seed % 7) as f64, beta: 1.5, gamma: 0.25, delta: 3.0, theta: 9.0,
                blink_strength: ((i as u64 * seed) % 11) as f64, attention: (i % 101) as f64,
            }).collect();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("eeg.csv");
            write_eeg(&path, &samples).unwrap();
            proptest::prop_assert_eq!(load_eeg(&path).unwrap(), samples);
        }
    }
}
