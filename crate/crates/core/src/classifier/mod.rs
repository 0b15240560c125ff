//! Binary open/closed eye classifier over 50×50 RGB eye crops.
//!
//! A small VGG-style CNN trained from scratch: three 3×3 convolution stages
//! (32/32/64 filters, ReLU, 2×2 max pooling), a 64-unit ReLU dense layer with
//! dropout 0.5 and a single sigmoid output. Scores near 1 mean "closed".

mod checkpoint;
mod network;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eyes::{EyeCrop, EyeSide, CROP_CHANNELS, CROP_SIZE};

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use network::{Layout, Segment};
pub use train::{dataset_fingerprint, train, EpochStats, TrainOutcome, TrainingItem};

use network::Workspace;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("model config violation: {0}")]
    ConfigViolation(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("training set contains a single class ({0})")]
    SingleClassDataset(&'static str),
    #[error("invalid input crop {index}: {reason}")]
    ShapeMismatch { index: usize, reason: String },
    #[error("model trained for {model} eye crops, got a {got} crop")]
    WrongEye { model: EyeSide, got: EyeSide },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// `[height, width, channels]`
    pub input_size: [usize; 3],
    pub conv_filters: Vec<usize>,
    pub kernel: usize,
    pub pool: usize,
    pub dense_units: usize,
    pub dropout_rate: f32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_size: [CROP_SIZE, CROP_SIZE, CROP_CHANNELS],
            conv_filters: vec![32, 32, 64],
            kernel: 3,
            pool: 2,
            dense_units: 64,
            dropout_rate: 0.5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        let bad = |m: String| Err(ClassifierError::ConfigViolation(m));
        if self.conv_filters.len() != 3 {
            return bad(format!(
                "expected exactly 3 convolution stages, got {}",
                self.conv_filters.len()
            ));
        }
        if self.conv_filters.contains(&0) || self.dense_units == 0 {
            return bad("layer widths must be positive".into());
        }
        if self.kernel.is_multiple_of(2) || self.kernel == 0 {
            return bad(format!("kernel must be odd, got {}", self.kernel));
        }
        if self.pool < 2 {
            return bad(format!("pool must be >= 2, got {}", self.pool));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout rate {} outside [0, 1)", self.dropout_rate));
        }
        let [h, w, _] = self.input_size;
        let shrink = self.pool.pow(3);
        if h < shrink || w < shrink {
            return bad(format!("input {h}×{w} too small for three pooling stages"));
        }
        Ok(())
    }
}

/// Which eye crops a model accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EyeMode {
    /// One model for both eyes; right-eye crops are mirrored to the left orientation.
    Shared,
    /// A model for a single eye side, no mirroring.
    Single(EyeSide),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f32,
    pub epochs: usize,
    pub validation_fraction: f64,
    pub seed: u64,
    pub early_stop_patience: usize,
    pub eye_mode: EyeMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 50,
            learning_rate: 0.001,
            epochs: 30,
            validation_fraction: 0.2,
            seed: 0,
            early_stop_patience: 5,
            eye_mode: EyeMode::Shared,
        }
    }
}

/// Sigmoid outputs are kept strictly inside (0, 1).
const LOGIT_LIMIT: f64 = 30.0;

pub(crate) fn sigmoid(logit: f32) -> f64 {
    let z = (logit as f64).clamp(-LOGIT_LIMIT, LOGIT_LIMIT);
    1.0 / (1.0 + (-z).exp())
}

#[derive(Debug, Clone)]
pub struct BlinkModel {
    config: ModelConfig,
    eye_mode: EyeMode,
    layout: Layout,
    params: Vec<f32>,
}

impl BlinkModel {
    /// Freshly initialised model (Glorot-uniform weights from `seed`).
    pub fn build(
        config: ModelConfig,
        eye_mode: EyeMode,
        seed: u64,
    ) -> Result<Self, ClassifierError> {
        config.validate()?;
        let layout = Layout::new(&config);
        let params = layout.init_params(&mut ChaCha8Rng::seed_from_u64(seed));
        Ok(Self {
            config,
            eye_mode,
            layout,
            params,
        })
    }

    pub(crate) fn from_parts(
        config: ModelConfig,
        eye_mode: EyeMode,
        params: Vec<f32>,
    ) -> Result<Self, ClassifierError> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.param_count() {
            return Err(ClassifierError::Checkpoint(format!(
                "expected {} parameters, got {}",
                layout.param_count(),
                params.len()
            )));
        }
        Ok(Self {
            config,
            eye_mode,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn eye_mode(&self) -> EyeMode {
        self.eye_mode
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    /// Sets the output layer to zero, so every prediction is exactly 0.5.
    pub fn zero_output_layer(&mut self) {
        let (w, b) = (self.layout.out_w, self.layout.out_b);
        self.params[w..w + self.layout.units].fill(0.0);
        self.params[b] = 0.0;
    }

    /// CHW network input for a crop, mirroring right eyes in shared mode.
    pub(crate) fn input_tensor(&self, crop: &EyeCrop) -> Vec<f32> {
        let mirror = self.eye_mode == EyeMode::Shared && crop.side == EyeSide::Right;
        crop_to_chw(crop, mirror)
    }

    fn check(&self, index: usize, crop: &EyeCrop) -> Result<(), ClassifierError> {
        crop.validate()
            .map_err(|e| ClassifierError::ShapeMismatch {
                index,
                reason: e.to_string(),
            })?;
        if let EyeMode::Single(side) = self.eye_mode {
            if crop.side != side {
                return Err(ClassifierError::WrongEye {
                    model: side,
                    got: crop.side,
                });
            }
        }
        Ok(())
    }

    pub(crate) fn logit(&self, input: &[f32], ws: &mut Workspace) -> f32 {
        network::infer(&self.layout, &self.params, input, ws)
    }

    pub fn predict_one(&self, crop: &EyeCrop) -> Result<f64, ClassifierError> {
        self.check(0, crop)?;
        let mut ws = Workspace::inference(&self.layout);
        Ok(sigmoid(self.logit(&self.input_tensor(crop), &mut ws)))
    }

    /// Blink scores in (0, 1), one per crop, in input order. Dropout is off.
    pub fn predict(&self, crops: &[EyeCrop]) -> Result<Vec<f64>, ClassifierError> {
        for (i, c) in crops.iter().enumerate() {
            self.check(i, c)?;
        }
        Ok(crops
            .par_chunks(16)
            .flat_map_iter(|chunk| {
                let mut ws = Workspace::inference(&self.layout);
                chunk
                    .iter()
                    .map(|c| sigmoid(self.logit(&self.input_tensor(c), &mut ws)))
                    .collect::<Vec<_>>()
            })
            .collect())
    }
}

/// HWC crop to the CHW layout the network consumes.
pub(crate) fn crop_to_chw(crop: &EyeCrop, mirror: bool) -> Vec<f32> {
    let px = crop.pixels();
    let plane = CROP_SIZE * CROP_SIZE;
    let mut out = vec![0.0f32; CROP_CHANNELS * plane];
    for y in 0..CROP_SIZE {
        for x in 0..CROP_SIZE {
            let sx = if mirror { CROP_SIZE - 1 - x } else { x };
            let src = (y * CROP_SIZE + sx) * CROP_CHANNELS;
            for c in 0..CROP_CHANNELS {
                out[c * plane + y * CROP_SIZE + x] = px[src + c];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eyes::CROP_LEN;
    use rand::Rng;

    fn random_crop(rng: &mut impl Rng, side: EyeSide) -> EyeCrop {
        EyeCrop::new(
            side,
            (0..CROP_LEN).map(|_| rng.gen::<f32>()).collect(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn default_config_is_valid() {
        ModelConfig::default().validate().unwrap();
        let cfg = TrainConfig::default();
        assert_eq!(cfg.batch_size, 50);
        assert_eq!(cfg.learning_rate, 0.001);
    }

    #[test]
    fn config_violations() {
        let mut c = ModelConfig::default();
        c.conv_filters = vec![32, 64];
        assert!(matches!(
            BlinkModel::build(c, EyeMode::Shared, 0),
            Err(ClassifierError::ConfigViolation(_))
        ));
        let mut c = ModelConfig::default();
        c.dropout_rate = 1.0;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.kernel = 4;
        assert!(c.validate().is_err());
    }

    #[test]
    fn single_forward_in_open_interval() {
        let model = BlinkModel::build(ModelConfig::default(), EyeMode::Shared, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = model
            .predict_one(&random_crop(&mut rng, EyeSide::Left))
            .unwrap();
        assert!(s > 0.0 && s < 1.0);
    }

    #[test]
    fn zero_output_layer_gives_one_half() {
        let mut model = BlinkModel::build(ModelConfig::default(), EyeMode::Shared, 1).unwrap();
        model.zero_output_layer();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let crops: Vec<_> = (0..4)
            .map(|_| random_crop(&mut rng, EyeSide::Left))
            .collect();
        assert!(model.predict(&crops).unwrap().iter().all(|&s| s == 0.5));
    }

    #[test]
    fn batch_of_fifty_and_determinism() {
        let model = BlinkModel::build(ModelConfig::default(), EyeMode::Shared, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let crops: Vec<_> = (0..50)
            .map(|i| {
                random_crop(
                    &mut rng,
                    if i % 2 == 0 {
                        EyeSide::Left
                    } else {
                        EyeSide::Right
                    },
                )
            })
            .collect();
        let a = model.predict(&crops).unwrap();
        let b = model.predict(&crops).unwrap();
        assert_eq!(a.len(), 50);
        assert_eq!(a, b);
        for (c, s) in crops.iter().zip(&a) {
            assert_eq!(model.predict_one(c).unwrap(), *s);
        }
    }

    #[test]
    fn right_crops_are_mirrored_in_shared_mode() {
        let model = BlinkModel::build(ModelConfig::default(), EyeMode::Shared, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let left = random_crop(&mut rng, EyeSide::Left);
        let mut right = left.mirrored();
        right.side = EyeSide::Right;
        assert_eq!(
            model.predict_one(&left).unwrap(),
            model.predict_one(&right).unwrap()
        );
    }

    #[test]
    fn out_of_range_crop_rejected() {
        let model = BlinkModel::build(ModelConfig::default(), EyeMode::Shared, 1).unwrap();
        let mut px = vec![0.5f32; CROP_LEN];
        px[0] = 1.2;
        let bad = EyeCrop::new_unchecked(EyeSide::Left, px, None);
        assert!(matches!(
            model.predict(&[bad]),
            Err(ClassifierError::ShapeMismatch { index: 0, .. })
        ));
    }

    #[test]
    fn per_eye_model_rejects_other_side() {
        let model =
            BlinkModel::build(ModelConfig::default(), EyeMode::Single(EyeSide::Left), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            model.predict_one(&random_crop(&mut rng, EyeSide::Right)),
            Err(ClassifierError::WrongEye { .. })
        ));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]
        #[test]
        fn output_strictly_inside_unit_interval(seed in 0u64..1000, scale in 0.0f32..1.0) {
            let mut model = BlinkModel::build(ModelConfig::default(), EyeMode::Shared, seed).unwrap();
            // exaggerate the weights to push logits toward saturation
            for p in model.params_mut() { *p *= 50.0; }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let px: Vec<f32> = (0..CROP_LEN).map(|_| rng.gen::<f32>() * scale).collect();
            let s = model.predict_one(&EyeCrop::new(EyeSide::Left, px, None).unwrap()).unwrap();
            proptest::prop_assert!(s > 0.0 && s < 1.0);
        }
    }
}
