//! Procedural open/closed eye images.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::eyes::{EyeCrop, EyeSide, CROP_LEN, CROP_SIZE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EyeState {
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticEyeSpec {
    pub state: EyeState,
    /// Gaze offset in `[-1, 1]²`; positive y looks down and narrows the aperture.
    pub iris_position: (f64, f64),
    /// Standard deviation of additive Gaussian pixel noise.
    pub noise_level: f64,
    /// Multiplicative brightness.
    pub illumination: f64,
    pub seed: u64,
}

impl SyntheticEyeSpec {
    pub fn new(state: EyeState, seed: u64) -> Self {
        Self {
            state,
            iris_position: (0.0, 0.0),
            noise_level: 0.0,
            illumination: 1.0,
            seed,
        }
    }

    /// Draws gaze, noise and illumination from the ranges used for training data.
    pub fn random<R: Rng>(rng: &mut R, state: EyeState) -> Self {
        Self {
            state,
            iris_position: (rng.gen_range(-1.0..1.0), rng.gen_range(-0.6..0.8)),
            noise_level: rng.gen_range(0.0..0.06),
            illumination: rng.gen_range(0.6..1.2),
            seed: rng.gen(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RenderedEye {
    pub crop: EyeCrop,
    pub state: EyeState,
}

const SKIN: [f64; 3] = [0.87, 0.70, 0.60];
const LID: [f64; 3] = [0.78, 0.60, 0.51];
const BROW: [f64; 3] = [0.30, 0.22, 0.18];
const SCLERA: [f64; 3] = [0.94, 0.94, 0.92];
const IRIS: [f64; 3] = [0.38, 0.25, 0.15];
const PUPIL: [f64; 3] = [0.05, 0.04, 0.04];
const LINE: [f64; 3] = [0.20, 0.13, 0.10];

const CX: f64 = 25.0;
const CY: f64 = 26.0;
const HALF_WIDTH: f64 = 17.0;
const HALF_HEIGHT: f64 = 8.0;

fn eye_color(spec: &SyntheticEyeSpec, x: f64, y: f64) -> [f64; 3] {
    let (gx, gy) = spec.iris_position;
    let brow_y = 10.0 + 0.008 * (x - CX).powi(2);
    if (x - CX).abs() < 18.0 && (y - brow_y).abs() < 1.6 {
        return BROW;
    }
    let b = HALF_HEIGHT * (1.0 - 0.35 * gy.max(0.0));
    let u = (x - CX) / HALF_WIDTH;
    let v = (y - CY) / b;
    let r = (u * u + v * v).sqrt();
    match spec.state {
        EyeState::Open => {
            if r <= 1.0 {
                if r > 0.88 && v < 0.0 {
                    return LINE;
                }
                let ix = CX + 6.0 * gx;
                let iy = CY + 3.0 * gy;
                let d = ((x - ix).powi(2) + (y - iy).powi(2)).sqrt();
                if d < 2.8 {
                    PUPIL
                } else if d < 6.5 {
                    IRIS
                } else {
                    SCLERA
                }
            } else {
                SKIN
            }
        }
        EyeState::Closed => {
            if u.abs() <= 1.0 {
                let lid_y = CY + 2.5 * (1.0 - u * u);
                if (y - lid_y).abs() < 1.1 {
                    return LINE;
                }
                // lashes hanging off the closed lid
                if y > lid_y
                    && y < lid_y + 3.0
                    && ((x - CX) as i64).rem_euclid(4) == 0
                    && u.abs() < 0.85
                {
                    return LINE;
                }
                if r <= 1.0 && y < lid_y {
                    return LID;
                }
            }
            SKIN
        }
    }
}

/// Renders a 50×50 left-oriented eye. Deterministic for a given spec.
pub fn render_eye(spec: &SyntheticEyeSpec) -> RenderedEye {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_level.max(0.0)).expect("finite noise level");
    let mut pixels = vec![0f32; CROP_LEN];
    for i in 0..CROP_SIZE {
        for j in 0..CROP_SIZE {
            // 2×2 supersampling smooths the outlines
            let mut acc = [0.0; 3];
            for (oy, ox) in [(0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)] {
                let c = eye_color(spec, j as f64 + ox, i as f64 + oy);
                for k in 0..3 {
                    acc[k] += c[k] / 4.0;
                }
            }
            for (k, a) in acc.iter().enumerate() {
                let n = if spec.noise_level > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                pixels[(i * CROP_SIZE + j) * 3 + k] =
                    (a * spec.illumination + n).clamp(0.0, 1.0) as f32;
            }
        }
    }
    RenderedEye {
        crop: EyeCrop::new_unchecked(EyeSide::Left, pixels, None),
        state: spec.state,
    }
}
