//! Mini-batch training with Adam and binary cross-entropy.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::network::{self, Dropout, Workspace};
use super::{BlinkModel, Checkpoint, ClassifierError, EyeMode, ModelConfig, TrainConfig};
use crate::eyes::EyeCrop;

/// Samples per gradient partial; fixed so summation order never depends on the thread count.
const GRAD_CHUNK: usize = 10;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPSILON: f64 = 1e-7;

/// One labelled crop. `group` identifies the sample (e.g. the 21-frame
/// window) the crop came from; train/validation splits never separate a group.
#[derive(Debug, Clone)]
pub struct TrainingItem {
    pub crop: EyeCrop,
    /// `true` = closed eye / blink.
    pub label: bool,
    pub group: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
    pub stopped_early: bool,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn mix(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x5EED, |acc, &p| splitmix(acc ^ splitmix(p)))
}

fn bce_with_logits(z: f32, y: f32) -> f64 {
    let (z, y) = (z as f64, y as f64);
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

/// SHA-256 over labels, sides and pixel bytes, in item order.
pub fn dataset_fingerprint(items: &[TrainingItem]) -> String {
    let mut h = Sha256::new();
    for it in items {
        h.update([u8::from(it.label), it.crop.side as u8]);
        for v in it.crop.pixels() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Stratified split at the group level.
fn split_groups(items: &[TrainingItem], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut groups: BTreeMap<&str, (bool, Vec<usize>)> = BTreeMap::new();
    for (i, it) in items.iter().enumerate() {
        let e = groups
            .entry(it.group.as_str())
            .or_insert((false, Vec::new()));
        e.0 |= it.label;
        e.1.push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, 0x5917]));
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for class in [false, true] {
        let mut members: Vec<&Vec<usize>> = groups
            .values()
            .filter(|(l, _)| *l == class)
            .map(|(_, v)| v)
            .collect();
        members.shuffle(&mut rng);
        let n_val = (fraction * members.len() as f64).round() as usize;
        for (k, idx) in members.into_iter().enumerate() {
            if k < n_val {
                val.extend_from_slice(idx);
            } else {
                train.extend_from_slice(idx);
            }
        }
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

struct Adam {
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(lr: f32, n: usize) -> Self {
        Self {
            lr: lr as f64,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f32], grads: &[f32]) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let g = g as f64;
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let update = self.lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPSILON);
            *p -= update as f32;
        }
    }
}

fn evaluate(
    model: &BlinkModel,
    inputs: &[Vec<f32>],
    labels: &[f32],
    indices: &[usize],
) -> (f64, f64) {
    let per: Vec<(f64, bool)> = indices
        .par_chunks(16)
        .flat_map_iter(|chunk| {
            let mut ws = Workspace::inference(&model.layout);
            chunk
                .iter()
                .map(|&i| {
                    let z = model.logit(&inputs[i], &mut ws);
                    (
                        bce_with_logits(z, labels[i]),
                        (z > 0.0) == (labels[i] > 0.5),
                    )
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let n = per.len().max(1) as f64;
    (
        per.iter().map(|p| p.0).sum::<f64>() / n,
        per.iter().filter(|p| p.1).count() as f64 / n,
    )
}

/// Trains a fresh model and returns the checkpoint with the best validation
/// loss (training loss when there is no validation split).
pub fn train(
    items: &[TrainingItem],
    model_config: ModelConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome, ClassifierError> {
    let items: Vec<TrainingItem> = match config.eye_mode {
        EyeMode::Shared => items.to_vec(),
        EyeMode::Single(side) => items
            .iter()
            .filter(|it| it.crop.side == side)
            .cloned()
            .collect(),
    };
    if items.is_empty() {
        return Err(ClassifierError::EmptyDataset);
    }
    if !items.iter().any(|it| it.label) {
        return Err(ClassifierError::SingleClassDataset("open"));
    }
    if items.iter().all(|it| it.label) {
        return Err(ClassifierError::SingleClassDataset("closed"));
    }
    for (i, it) in items.iter().enumerate() {
        it.crop
            .validate()
            .map_err(|e| ClassifierError::ShapeMismatch {
                index: i,
                reason: e.to_string(),
            })?;
    }
    if config.batch_size == 0 {
        return Err(ClassifierError::ConfigViolation(
            "batch size must be positive".into(),
        ));
    }
    if !(0.0..1.0).contains(&config.validation_fraction) {
        return Err(ClassifierError::ConfigViolation(format!(
            "validation fraction {} outside [0, 1)",
            config.validation_fraction
        )));
    }
    if config.batch_size != 50 || config.learning_rate != 0.001 {
        log::info!(
            "training with batch size {} and learning rate {} (defaults are 50 and 0.001)",
            config.batch_size,
            config.learning_rate
        );
    }

    let mut model = BlinkModel::build(model_config, config.eye_mode, config.seed)?;
    let fingerprint = dataset_fingerprint(&items);
    let inputs: Vec<Vec<f32>> = items
        .iter()
        .map(|it| model.input_tensor(&it.crop))
        .collect();
    let labels: Vec<f32> = items
        .iter()
        .map(|it| if it.label { 1.0 } else { 0.0 })
        .collect();
    let (train_idx, val_idx) = split_groups(&items, config.validation_fraction, config.seed);
    if train_idx.is_empty() {
        return Err(ClassifierError::EmptyDataset);
    }

    let layout = model.layout.clone();
    let rate = model.config.dropout_rate;
    let mut adam = Adam::new(config.learning_rate, layout.param_count());
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Vec<f32>)> = None;
    let mut stale = 0;
    let mut stopped_early = false;
    let mut order = train_idx.clone();

    for epoch in 0..config.epochs {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(&[
            config.seed,
            epoch as u64,
            1,
        ])));
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let scale = 1.0 / batch.len() as f32;
            let params = &model.params;
            let partials: Vec<(Vec<f32>, f64, usize)> = batch
                .par_chunks(GRAD_CHUNK)
                .enumerate()
                .map(|(c, chunk)| {
                    let mut ws = Workspace::new(&layout);
                    let mut grads = vec![0.0f32; layout.param_count()];
                    let (mut loss, mut ok) = (0.0, 0);
                    for (j, &i) in chunk.iter().enumerate() {
                        let key = mix(&[
                            config.seed,
                            epoch as u64,
                            b as u64,
                            (c * GRAD_CHUNK + j) as u64,
                        ]);
                        let mut rng = ChaCha8Rng::seed_from_u64(key);
                        let z = network::forward(
                            &layout,
                            params,
                            &inputs[i],
                            &mut ws,
                            Some(Dropout {
                                rate,
                                rng: &mut rng,
                            }),
                        );
                        let y = labels[i];
                        loss += bce_with_logits(z, y);
                        ok += usize::from((z > 0.0) == (y > 0.5));
                        let p = 1.0 / (1.0 + (-z).exp());
                        network::backward(&layout, params, &mut ws, (p - y) * scale, &mut grads);
                    }
                    (grads, loss, ok)
                })
                .collect();
            let mut grads = vec![0.0f32; layout.param_count()];
            for (g, loss, ok) in partials {
                for (a, b) in grads.iter_mut().zip(&g) {
                    *a += b;
                }
                loss_sum += loss;
                correct += ok;
            }
            adam.step(&mut model.params, &grads);
        }

        let n = train_idx.len() as f64;
        let (val_loss, val_accuracy) = if val_idx.is_empty() {
            (None, None)
        } else {
            let (l, a) = evaluate(&model, &inputs, &labels, &val_idx);
            (Some(l), Some(a))
        };
        let stats = EpochStats {
            epoch: epoch + 1,
            train_loss: loss_sum / n,
            train_accuracy: correct as f64 / n,
            val_loss,
            val_accuracy,
        };
        log::info!(
            "epoch {}: loss {:.4} acc {:.4} val_loss {:?} val_acc {:?}",
            stats.epoch,
            stats.train_loss,
            stats.train_accuracy,
            stats.val_loss,
            stats.val_accuracy
        );
        let monitored = stats.val_loss.unwrap_or(stats.train_loss);
        history.push(stats);

        if best.as_ref().is_none_or(|(l, _, _)| monitored < *l) {
            best = Some((monitored, epoch + 1, model.params.clone()));
            stale = 0;
        } else {
            stale += 1;
            if config.early_stop_patience > 0 && stale >= config.early_stop_patience {
                stopped_early = true;
                break;
            }
        }
    }

    let best_epoch = best.as_ref().map(|b| b.1);
    if let Some((_, _, params)) = best {
        model.params = params;
    }
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            version: super::CHECKPOINT_VERSION.to_string(),
            model,
            train_config: config.clone(),
            history,
            best_epoch,
            dataset_fingerprint: fingerprint,
            input_normalization: "pixel values scaled to [0, 1]".into(),
        },
        train_indices: train_idx,
        val_indices: val_idx,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eyes::{EyeSide, CROP_LEN};
    use crate::synth::{render_eye, EyeState, SyntheticEyeSpec};

    fn synthetic_items(n: usize, seed: u64) -> Vec<TrainingItem> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let state = if i % 2 == 0 {
                    EyeState::Open
                } else {
                    EyeState::Closed
                };
                let spec = SyntheticEyeSpec::random(&mut rng, state);
                let mut crop = render_eye(&spec).crop;
                if i % 4 >= 2 {
                    crop = crop.mirrored();
                    crop.side = EyeSide::Right;
                }
                TrainingItem {
                    crop,
                    label: state == EyeState::Closed,
                    group: format!("g{i}"),
                }
            })
            .collect()
    }

    #[test]
    fn error_paths() {
        let cfg = TrainConfig::default();
        assert!(matches!(
            train(&[], ModelConfig::default(), &cfg),
            Err(ClassifierError::EmptyDataset)
        ));
        let open: Vec<_> = synthetic_items(8, 1)
            .into_iter()
            .filter(|i| !i.label)
            .collect();
        assert!(matches!(
            train(&open, ModelConfig::default(), &cfg),
            Err(ClassifierError::SingleClassDataset("open"))
        ));
    }

    #[test]
    fn zero_epochs_gives_untrained_model() {
        let items = synthetic_items(10, 2);
        let cfg = TrainConfig {
            epochs: 0,
            seed: 3,
            ..TrainConfig::default()
        };
        let out = train(&items, ModelConfig::default(), &cfg).unwrap();
        assert!(out.checkpoint.history.is_empty());
        let fresh = BlinkModel::build(ModelConfig::default(), EyeMode::Shared, 3).unwrap();
        assert_eq!(out.checkpoint.model.params(), fresh.params());
    }

    #[test]
    fn group_split_is_stratified_and_disjoint() {
        let mut items = synthetic_items(40, 3);
        for (i, it) in items.iter_mut().enumerate() {
            it.group = format!("w{}", i / 4);
            it.label = (i / 4) % 2 == 1;
        }
        let (tr, va) = split_groups(&items, 0.2, 7);
        assert_eq!(tr.len() + va.len(), 40);
        let groups = |idx: &[usize]| {
            idx.iter()
                .map(|&i| items[i].group.clone())
                .collect::<std::collections::BTreeSet<_>>()
        };
        assert!(groups(&tr).is_disjoint(&groups(&va)));
        // 5 positive and 5 negative groups: one of each held out
        assert_eq!(va.len(), 8);
        assert_eq!(va.iter().filter(|&&i| items[i].label).count(), 4);
    }

    #[test]
    fn training_loss_decreases_over_first_epochs() {
        let items = synthetic_items(200, 4);
        let cfg = TrainConfig {
            epochs: 3,
            seed: 11,
            early_stop_patience: 0,
            ..TrainConfig::default()
        };
        let out = train(&items, ModelConfig::default(), &cfg).unwrap();
        let losses: Vec<f64> = out
            .checkpoint
            .history
            .iter()
            .map(|h| h.train_loss)
            .collect();
        assert_eq!(losses.len(), 3);
        assert!(losses[1] < losses[0] && losses[2] < losses[1], "{losses:?}");
    }

    #[test]
    fn fixed_seed_reproduces_history() {
        let items = synthetic_items(60, 5);
        let cfg = TrainConfig {
            epochs: 2,
            seed: 2,
            ..TrainConfig::default()
        };
        let a = train(&items, ModelConfig::default(), &cfg).unwrap();
        let b = train(&items, ModelConfig::default(), &cfg).unwrap();
        assert_eq!(a.checkpoint.history, b.checkpoint.history);
        assert_eq!(a.checkpoint.model.params(), b.checkpoint.model.params());
    }

    #[test]
    fn fingerprint_tracks_content() {
        let items = synthetic_items(6, 6);
        let fp = dataset_fingerprint(&items);
        let mut changed = items.clone();
        let mut px = changed[0].crop.pixels().to_vec();
        px[CROP_LEN - 1] = 1.0 - px[CROP_LEN - 1];
        changed[0].crop = EyeCrop::new(changed[0].crop.side, px, None).unwrap();
        assert_ne!(fp, dataset_fingerprint(&changed));
        assert_eq!(fp, dataset_fingerprint(&items));
    }
}
