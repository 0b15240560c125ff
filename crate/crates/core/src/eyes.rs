//! Eye localisation from 68-point facial landmarks and 50×50 eye crops.
//!
//! Landmark indices follow the common 68-point layout: 36–41 outline the
//! eye on the image-left side (the subject's right eye) and 42–47 the eye on
//! the image-right side. Throughout this crate "left" always means
//! image-left.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicU64, Ordering};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::ingest::FrameRef;

pub const CROP_SIZE: usize = 50;
pub const CROP_CHANNELS: usize = 3;
pub const CROP_LEN: usize = CROP_SIZE * CROP_SIZE * CROP_CHANNELS;
pub const LANDMARK_COUNT: usize = 68;
pub const DEFAULT_PAD: f64 = 0.5;

/// Recorded alongside stored boxes so consumers know which eye is which.
pub const EYE_CONVENTION: &str =
    "68-point landmarks; left = image-left eye (indices 36-41), right = image-right eye (indices 42-47)";

const LEFT_EYE: std::ops::Range<usize> = 36..42;
const RIGHT_EYE: std::ops::Range<usize> = 42..48;

#[derive(Debug, Error)]
pub enum EyeError {
    #[error("no face found")]
    NoFaceFound,
    #[error("landmark adapter failure: {0}")]
    AdapterFailure(String),
    #[error("degenerate {0} eye hull (zero area)")]
    DegenerateBox(EyeSide),
    #[error("eye box does not intersect the frame")]
    EmptyIntersection,
    #[error("invalid eye crop: {0}")]
    InvalidCrop(String),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EyeSide {
    Left,
    Right,
}

impl EyeSide {
    pub fn as_str(self) -> &'static str {
        match self {
            EyeSide::Left => "left",
            EyeSide::Right => "right",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "left" => Some(EyeSide::Left),
            "right" => Some(EyeSide::Right),
            _ => None,
        }
    }
}

impl std::fmt::Display for EyeSide {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub points: Vec<[f64; 2]>,
    pub confidence: f64,
}

impl LandmarkSet {
    pub fn new(points: Vec<[f64; 2]>, confidence: f64) -> Result<Self, EyeError> {
        if points.len() != LANDMARK_COUNT {
            return Err(EyeError::AdapterFailure(format!(
                "expected {LANDMARK_COUNT} landmarks, got {}",
                points.len()
            )));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(EyeError::AdapterFailure(
                "non-finite landmark coordinate".into(),
            ));
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(EyeError::AdapterFailure(format!(
                "confidence {confidence} outside [0, 1]"
            )));
        }
        Ok(Self { points, confidence })
    }

    pub fn eye_points(&self, side: EyeSide) -> &[[f64; 2]] {
        match side {
            EyeSide::Left => &self.points[LEFT_EYE],
            EyeSide::Right => &self.points[RIGHT_EYE],
        }
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            points: self.points.iter().map(|[x, y]| [x + dx, y + dy]).collect(),
            confidence: self.confidence,
        }
    }
}

/// Axis-aligned eye region in continuous pixel coordinates; pixel `(i, j)`
/// covers `[j, j + 1) × [i, i + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EyeBox {
    pub side: EyeSide,
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl EyeBox {
    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }

    /// Grows the shorter axis symmetrically so the box becomes square.
    pub fn squared(&self) -> Self {
        let side = self.width().max(self.height());
        let cx = (self.x0 + self.x1) / 2.0;
        let cy = (self.y0 + self.y1) / 2.0;
        Self {
            side: self.side,
            x0: cx - side / 2.0,
            y0: cy - side / 2.0,
            x1: cx + side / 2.0,
            y1: cy + side / 2.0,
        }
    }

    pub fn intersects(&self, width: u32, height: u32) -> bool {
        self.x0 < width as f64 && self.x1 > 0.0 && self.y0 < height as f64 && self.y1 > 0.0
    }

    fn clamped(&self, width: u32, height: u32) -> Self {
        Self {
            side: self.side,
            x0: self.x0.clamp(0.0, width as f64),
            y0: self.y0.clamp(0.0, height as f64),
            x1: self.x1.clamp(0.0, width as f64),
            y1: self.y1.clamp(0.0, height as f64),
        }
    }
}

/// A 50×50×3 eye image, HWC order, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct EyeCrop {
    pub side: EyeSide,
    pixels: Vec<f32>,
    pub source: Option<FrameRef>,
}

impl EyeCrop {
    pub fn new(
        side: EyeSide,
        pixels: Vec<f32>,
        source: Option<FrameRef>,
    ) -> Result<Self, EyeError> {
        let crop = Self {
            side,
            pixels,
            source,
        };
        crop.validate()?;
        Ok(crop)
    }

    /// Constructs without range checks; `validate` reports violations later.
    pub fn new_unchecked(side: EyeSide, pixels: Vec<f32>, source: Option<FrameRef>) -> Self {
        Self {
            side,
            pixels,
            source,
        }
    }

    pub fn validate(&self) -> Result<(), EyeError> {
        if self.pixels.len() != CROP_LEN {
            return Err(EyeError::InvalidCrop(format!(
                "expected {CROP_LEN} values, got {}",
                self.pixels.len()
            )));
        }
        if let Some(v) = self.pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(EyeError::InvalidCrop(format!("value {v} outside [0, 1]")));
        }
        Ok(())
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }

    pub fn at(&self, y: usize, x: usize, c: usize) -> f32 {
        self.pixels[(y * CROP_SIZE + x) * CROP_CHANNELS + c]
    }

    /// Horizontal mirror; the side tag is kept.
    pub fn mirrored(&self) -> Self {
        let mut pixels = vec![0.0; CROP_LEN];
        for y in 0..CROP_SIZE {
            for x in 0..CROP_SIZE {
                let src = (y * CROP_SIZE + (CROP_SIZE - 1 - x)) * CROP_CHANNELS;
                let dst = (y * CROP_SIZE + x) * CROP_CHANNELS;
                pixels[dst..dst + CROP_CHANNELS]
                    .copy_from_slice(&self.pixels[src..src + CROP_CHANNELS]);
            }
        }
        Self {
            side: self.side,
            pixels,
            source: self.source,
        }
    }

    pub fn to_image(&self) -> RgbImage {
        RgbImage::from_fn(CROP_SIZE as u32, CROP_SIZE as u32, |x, y| {
            let i = (y as usize * CROP_SIZE + x as usize) * CROP_CHANNELS;
            Rgb([
                to_u8(self.pixels[i]),
                to_u8(self.pixels[i + 1]),
                to_u8(self.pixels[i + 2]),
            ])
        })
    }

    /// Reads any image and resamples it to a crop (the whole image is the eye region).
    pub fn from_image(
        side: EyeSide,
        image: &RgbImage,
        source: Option<FrameRef>,
    ) -> Result<Self, EyeError> {
        let full = EyeBox {
            side,
            x0: 0.0,
            y0: 0.0,
            x1: image.width() as f64,
            y1: image.height() as f64,
        };
        resample(image, &full, side, source)
    }
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// A decoded video frame, with its file path when it came from disk.
#[derive(Debug, Clone)]
pub struct Frame {
    pub image: RgbImage,
    pub path: Option<PathBuf>,
    pub source: Option<FrameRef>,
}

impl Frame {
    pub fn open(path: &Path, source: Option<FrameRef>) -> Result<Self, EyeError> {
        let image = image::open(path)?.to_rgb8();
        Ok(Self {
            image,
            path: Some(path.to_path_buf()),
            source,
        })
    }

    pub fn from_image(image: RgbImage) -> Self {
        Self {
            image,
            path: None,
            source: None,
        }
    }
}

/// What a landmark provider returns before validation.
#[derive(Debug, Clone, PartialEq)]
pub struct RawLandmarks {
    pub points: Vec<[f64; 2]>,
    pub confidence: Option<f64>,
}

/// A facial landmark provider. `Ok(None)` means no face in the frame.
/// Implementations must not keep hidden global mutable state.
pub trait LandmarkAdapter: Send + Sync {
    fn raw_landmarks(&self, frame: &Frame) -> Result<Option<RawLandmarks>, String>;
}

impl<F> LandmarkAdapter for F
where
    F: Fn(&Frame) -> Result<Option<RawLandmarks>, String> + Send + Sync,
{
    fn raw_landmarks(&self, frame: &Frame) -> Result<Option<RawLandmarks>, String> {
        self(frame)
    }
}

pub fn detect_landmarks(
    adapter: &dyn LandmarkAdapter,
    frame: &Frame,
) -> Result<LandmarkSet, EyeError> {
    if frame.image.width() == 0 || frame.image.height() == 0 {
        return Err(EyeError::AdapterFailure("empty image".into()));
    }
    match adapter
        .raw_landmarks(frame)
        .map_err(EyeError::AdapterFailure)?
    {
        None => Err(EyeError::NoFaceFound),
        Some(raw) => LandmarkSet::new(raw.points, raw.confidence.unwrap_or(1.0)),
    }
}

/// Parses adapter JSON: `null`, `[[x, y], ...]` or `{"points": [...], "confidence": c}`.
pub fn parse_adapter_json(text: &str) -> Result<Option<RawLandmarks>, String> {
    let value: Value =
        serde_json::from_str(text.trim()).map_err(|e| format!("invalid JSON: {e}"))?;
    let (points, confidence) = match &value {
        Value::Null => return Ok(None),
        Value::Array(_) => (&value, None),
        Value::Object(obj) => match obj.get("points") {
            None | Some(Value::Null) => return Ok(None),
            Some(p) => (p, obj.get("confidence").and_then(Value::as_f64)),
        },
        _ => return Err("expected null, an array or an object".into()),
    };
    let points = points
        .as_array()
        .ok_or("`points` is not an array")?
        .iter()
        .map(|p| {
            let pair = p
                .as_array()
                .filter(|a| a.len() == 2)
                .ok_or("point is not an [x, y] pair")?;
            match (pair[0].as_f64(), pair[1].as_f64()) {
                (Some(x), Some(y)) => Ok([x, y]),
                _ => Err("non-numeric coordinate"),
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Some(RawLandmarks { points, confidence }))
}

/// Runs an external program as `<program> <args...> <image-path>` and reads
/// landmark JSON from its stdout.
#[derive(Debug, Clone)]
pub struct CommandAdapter {
    pub program: PathBuf,
    pub args: Vec<String>,
}

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

impl LandmarkAdapter for CommandAdapter {
    fn raw_landmarks(&self, frame: &Frame) -> Result<Option<RawLandmarks>, String> {
        let mut temp = None;
        let path = match &frame.path {
            Some(p) => p.clone(),
            None => {
                let n = TEMP_COUNTER.fetch_add(1, Ordering::Relaxed);
                let p =
                    std::env::temp_dir().join(format!("blinkwatch-{}-{n}.png", std::process::id()));
                frame.image.save(&p).map_err(|e| e.to_string())?;
                temp = Some(p.clone());
                p
            }
        };
        let output = Command::new(&self.program)
            .args(&self.args)
            .arg(&path)
            .output();
        if let Some(t) = temp {
            let _ = std::fs::remove_file(t);
        }
        let output = output.map_err(|e| format!("{}: {e}", self.program.display()))?;
        if !output.status.success() {
            let mut msg = format!("{} exited with {}", self.program.display(), output.status);
            let stderr = String::from_utf8_lossy(&output.stderr);
            if !stderr.trim().is_empty() {
                msg.push_str(": ");
                msg.push_str(stderr.trim());
            }
            return Err(msg);
        }
        parse_adapter_json(&String::from_utf8_lossy(&output.stdout))
    }
}

/// Mean 68-point face shape in face-box coordinates (`[0, 1]²`).
pub fn mean_shape() -> Vec<[f64; 2]> {
    use std::f64::consts::PI;
    let mut pts = Vec::with_capacity(LANDMARK_COUNT);
    // jaw, temple to temple through the chin
    for i in 0..17 {
        let th = PI * i as f64 / 16.0;
        pts.push([0.5 - 0.5 * th.cos(), 0.35 + 0.65 * th.sin()]);
    }
    // brows
    for (x0, x1) in [(0.16, 0.42), (0.58, 0.84)] {
        for i in 0..5 {
            let u = i as f64 / 4.0;
            pts.push([x0 + (x1 - x0) * u, 0.29 - 0.04 * (PI * u).sin()]);
        }
    }
    // nose bridge and base
    for i in 0..4 {
        pts.push([0.5, 0.40 + 0.06 * i as f64]);
    }
    for i in 0..5 {
        pts.push([
            0.42 + 0.04 * i as f64,
            0.64 + 0.02 * (1.0 - ((i as f64 - 2.0).abs() / 2.0)),
        ]);
    }
    // eyes: 36-41 outer corner, two upper lid points, inner corner, two lower lid points
    let (hw, hh) = (EYE_HALF_WIDTH, EYE_HALF_HEIGHT);
    for (cx, cy) in EYE_CENTERS {
        pts.extend_from_slice(&[
            [cx - hw, cy],
            [cx - hw / 3.0, cy - hh],
            [cx + hw / 3.0, cy - hh],
            [cx + hw, cy],
            [cx + hw / 3.0, cy + hh],
            [cx - hw / 3.0, cy + hh],
        ]);
    }
    // mouth, outer then inner ring, starting at the image-left corner
    for (n, a, b) in [(12usize, 0.16, 0.05), (8, 0.11, 0.025)] {
        for i in 0..n {
            let th = PI + 2.0 * PI * i as f64 / n as f64;
            pts.push([0.5 + a * th.cos(), 0.80 + b * th.sin()]);
        }
    }
    debug_assert_eq!(pts.len(), LANDMARK_COUNT);
    pts
}

/// Eye centres of the mean shape (image-left, image-right), face-box units.
pub const EYE_CENTERS: [(f64, f64); 2] = [(0.30, 0.42), (0.70, 0.42)];
pub const EYE_HALF_WIDTH: f64 = 0.09;
pub const EYE_HALF_HEIGHT: f64 = 0.035;

/// Places the mean shape into a face box `(x0, y0, x1, y1)`.
pub fn place_mean_shape(face: [f64; 4]) -> Vec<[f64; 2]> {
    let [x0, y0, x1, y1] = face;
    mean_shape()
        .into_iter()
        .map(|[u, v]| [x0 + u * (x1 - x0), y0 + v * (y1 - y0)])
        .collect()
}

/// Built-in landmark provider for frontal faces on a plain background:
/// segments the face as the region differing from the border colour and
/// fits the mean shape to its bounding box.
#[derive(Debug, Clone)]
pub struct MeanShapeAdapter {
    /// Summed absolute RGB difference from the background that counts as foreground.
    pub tolerance: u32,
    /// Minimum foreground fraction of the frame.
    pub min_fraction: f64,
}

impl Default for MeanShapeAdapter {
    fn default() -> Self {
        Self {
            tolerance: 60,
            min_fraction: 0.002,
        }
    }
}

impl MeanShapeAdapter {
    fn background(image: &RgbImage) -> [u8; 3] {
        let (w, h) = image.dimensions();
        let corners = [(0, 0), (w - 1, 0), (0, h - 1), (w - 1, h - 1)];
        let mut out = [0u8; 3];
        for (c, slot) in out.iter_mut().enumerate() {
            let mut v: Vec<u8> = corners
                .iter()
                .map(|&(x, y)| image.get_pixel(x, y)[c])
                .collect();
            v.sort_unstable();
            *slot = v[1];
        }
        out
    }

    pub fn face_box(&self, image: &RgbImage) -> Option<[f64; 4]> {
        let (w, h) = image.dimensions();
        let bg = Self::background(image);
        let mut row_counts = vec![0u32; h as usize];
        let mut col_counts = vec![0u32; w as usize];
        let mut total = 0u64;
        for (y, row) in image.as_raw().chunks_exact(w as usize * 3).enumerate() {
            for (x, p) in row.chunks_exact(3).enumerate() {
                let diff = p[0].abs_diff(bg[0]) as u32
                    + p[1].abs_diff(bg[1]) as u32
                    + p[2].abs_diff(bg[2]) as u32;
                if diff > self.tolerance {
                    row_counts[y] += 1;
                    col_counts[x] += 1;
                    total += 1;
                }
            }
        }
        if (total as f64) < self.min_fraction * (w as f64 * h as f64) || total < 64 {
            return None;
        }
        let span = |counts: &[u32]| {
            let first = counts.iter().position(|&c| c >= 2)?;
            let last = counts.iter().rposition(|&c| c >= 2)?;
            Some((first as f64, last as f64 + 1.0))
        };
        let (x0, x1) = span(&col_counts)?;
        let (y0, y1) = span(&row_counts)?;
        if x1 - x0 < 16.0 || y1 - y0 < 16.0 {
            return None;
        }
        Some([x0, y0, x1, y1])
    }
}

impl LandmarkAdapter for MeanShapeAdapter {
    fn raw_landmarks(&self, frame: &Frame) -> Result<Option<RawLandmarks>, String> {
        Ok(self.face_box(&frame.image).map(|face| RawLandmarks {
            points: place_mean_shape(face),
            confidence: Some(1.0),
        }))
    }
}

/// Hull of one eye's six landmarks, padded by `pad × max(w, h)` on every side.
/// Not clamped.
pub fn padded_eye_box(
    landmarks: &LandmarkSet,
    side: EyeSide,
    pad: f64,
) -> Result<EyeBox, EyeError> {
    let pts = landmarks.eye_points(side);
    let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
    let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &[x, y] in pts {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    let (w, h) = (x1 - x0, y1 - y0);
    if w <= 0.0 || h <= 0.0 {
        return Err(EyeError::DegenerateBox(side));
    }
    let m = pad * w.max(h);
    Ok(EyeBox {
        side,
        x0: x0 - m,
        y0: y0 - m,
        x1: x1 + m,
        y1: y1 + m,
    })
}

/// Left and right eye boxes, clamped to a `width × height` frame.
pub fn eye_boxes_from_landmarks(
    landmarks: &LandmarkSet,
    pad: f64,
    width: u32,
    height: u32,
) -> Result<(EyeBox, EyeBox), EyeError> {
    let boxed = |side| -> Result<EyeBox, EyeError> {
        let b = padded_eye_box(landmarks, side, pad)?;
        if !b.intersects(width, height) {
            return Err(EyeError::EmptyIntersection);
        }
        Ok(b.clamped(width, height))
    };
    Ok((boxed(EyeSide::Left)?, boxed(EyeSide::Right)?))
}

/// Crops the box (squared about its centre), bilinearly resamples to 50×50
/// and scales to [0, 1]. Samples beyond the frame edge replicate the border.
pub fn crop_and_resize(
    image: &RgbImage,
    eye_box: &EyeBox,
    source: Option<FrameRef>,
) -> Result<EyeCrop, EyeError> {
    if !eye_box.intersects(image.width(), image.height())
        || eye_box.width() <= 0.0
        || eye_box.height() <= 0.0
    {
        return Err(EyeError::EmptyIntersection);
    }
    resample(image, &eye_box.squared(), eye_box.side, source)
}

fn resample(
    image: &RgbImage,
    region: &EyeBox,
    side: EyeSide,
    source: Option<FrameRef>,
) -> Result<EyeCrop, EyeError> {
    let (w, h) = image.dimensions();
    if w == 0 || h == 0 {
        return Err(EyeError::EmptyIntersection);
    }
    let raw = image.as_raw();
    let stride = w as usize * 3;
    let sx = region.width() / CROP_SIZE as f64;
    let sy = region.height() / CROP_SIZE as f64;
    let max_x = (w - 1) as f64;
    let max_y = (h - 1) as f64;
    // (left index, right index, right weight) per output column
    let taps: Vec<(usize, usize, f64)> = (0..CROP_SIZE)
        .map(|j| {
            let fx = (region.x0 + (j as f64 + 0.5) * sx - 0.5).clamp(0.0, max_x);
            let x0 = fx.floor() as usize;
            (x0 * 3, (x0 + 1).min(w as usize - 1) * 3, fx - x0 as f64)
        })
        .collect();
    let mut pixels = vec![0f32; CROP_LEN];
    for (i, out_row) in pixels.chunks_exact_mut(CROP_SIZE * 3).enumerate() {
        let fy = (region.y0 + (i as f64 + 0.5) * sy - 0.5).clamp(0.0, max_y);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h as usize - 1);
        let wy = fy - y0 as f64;
        let top_row = &raw[y0 * stride..(y0 + 1) * stride];
        let bottom_row = &raw[y1 * stride..(y1 + 1) * stride];
        for (out, &(xa, xb, wx)) in out_row.chunks_exact_mut(3).zip(&taps) {
            for c in 0..3 {
                let top = top_row[xa + c] as f64 * (1.0 - wx) + top_row[xb + c] as f64 * wx;
                let bottom =
                    bottom_row[xa + c] as f64 * (1.0 - wx) + bottom_row[xb + c] as f64 * wx;
                let v = (top * (1.0 - wy) + bottom * wy) / 255.0;
                out[c] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    Ok(EyeCrop {
        side,
        pixels,
        source,
    })
}

/// Both eyes of one frame: landmarks, boxes and crops.
#[derive(Debug, Clone)]
pub struct EyePair {
    pub landmarks: LandmarkSet,
    pub left_box: EyeBox,
    pub right_box: EyeBox,
    pub left: EyeCrop,
    pub right: EyeCrop,
}

pub fn extract_eyes(
    adapter: &dyn LandmarkAdapter,
    frame: &Frame,
    pad: f64,
) -> Result<EyePair, EyeError> {
    let landmarks = detect_landmarks(adapter, frame)?;
    let (w, h) = frame.image.dimensions();
    let (left_box, right_box) = eye_boxes_from_landmarks(&landmarks, pad, w, h)?;
    let left = crop_and_resize(&frame.image, &left_box, frame.source)?;
    let right = crop_and_resize(&frame.image, &right_box, frame.source)?;
    Ok(EyePair {
        landmarks,
        left_box,
        right_box,
        left,
        right,
    })
}
