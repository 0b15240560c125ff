//! Synthetic training crops and 13-frame benchmark samples.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::eye::{render_eye, EyeState, SyntheticEyeSpec};
use crate::classifier::TrainingItem;
use crate::eyes::{EyeCrop, EyeSide};
use crate::labeler::SampleLabel;

pub const BENCH_FRAMES: usize = 13;

/// Renders an eye as seen from `side`: right eyes are mirror images.
pub fn render_side(spec: &SyntheticEyeSpec, side: EyeSide) -> EyeCrop {
    let crop = render_eye(spec).crop;
    match side {
        EyeSide::Left => crop,
        EyeSide::Right => {
            let mut m = crop.mirrored();
            m.side = EyeSide::Right;
            m
        }
    }
}

/// `n` labelled crops, half closed, sides alternating, in shuffled order.
/// Each crop is its own group.
pub fn training_crops(n: usize, seed: u64) -> Vec<TrainingItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items: Vec<TrainingItem> = (0..n)
        .map(|i| {
            let closed = i % 2 == 1;
            let side = if (i / 2) % 2 == 0 {
                EyeSide::Left
            } else {
                EyeSide::Right
            };
            let state = if closed {
                EyeState::Closed
            } else {
                EyeState::Open
            };
            let spec = SyntheticEyeSpec::random(&mut rng, state);
            TrainingItem {
                crop: render_side(&spec, side),
                label: closed,
                group: format!("crop{i:05}"),
            }
        })
        .collect();
    items.shuffle(&mut rng);
    items
}

#[derive(Debug, Clone)]
pub struct SyntheticBenchSample {
    pub sample_id: String,
    pub label: SampleLabel,
    pub eye_side: EyeSide,
    pub crops: Vec<EyeCrop>,
}

/// One 13-frame sample. Blink samples contain a single closure of 3 to 13
/// frames; gaze and lighting are held for the sample, noise varies per frame.
pub fn bench_sample(
    sample_id: &str,
    label: SampleLabel,
    eye_side: EyeSide,
    seed: u64,
) -> SyntheticBenchSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = SyntheticEyeSpec::random(&mut rng, EyeState::Open);
    let closed = match label {
        SampleLabel::Blink => {
            let len = rng.gen_range(3..=BENCH_FRAMES);
            let start = rng.gen_range(0..=BENCH_FRAMES - len);
            start..start + len
        }
        SampleLabel::NoBlink => 0..0,
    };
    let crops = (0..BENCH_FRAMES)
        .map(|f| {
            let spec = SyntheticEyeSpec {
                state: if closed.contains(&f) {
                    EyeState::Closed
                } else {
                    EyeState::Open
                },
                seed: rng.gen(),
                ..base.clone()
            };
            render_side(&spec, eye_side)
        })
        .collect();
    SyntheticBenchSample {
        sample_id: sample_id.to_string(),
        label,
        eye_side,
        crops,
    }
}

/// `blinks` blink and `no_blinks` no-blink samples, each rendered for both eyes.
pub fn bench_set(blinks: usize, no_blinks: usize, seed: u64) -> Vec<SyntheticBenchSample> {
    let mut out = Vec::with_capacity(2 * (blinks + no_blinks));
    let labelled = (0..blinks)
        .map(|i| (format!("b{i:04}"), SampleLabel::Blink))
        .chain((0..no_blinks).map(|i| (format!("n{i:04}"), SampleLabel::NoBlink)));
    for (k, (id, label)) in labelled.enumerate() {
        for (j, side) in [EyeSide::Left, EyeSide::Right].into_iter().enumerate() {
            let s = seed
                .wrapping_mul(1_000_003)
                .wrapping_add(2 * k as u64 + j as u64);
            out.push(bench_sample(&id, label, side, s));
        }
    }
    out
}

/// Writes samples in the benchmark layout:
/// `<root>/{blink|no_blink}/<sample_id>/<eye_side>/%02d.png` plus `labels.csv`.
pub fn write_bench(root: &Path, samples: &[SyntheticBenchSample]) -> Result<(), image::ImageError> {
    let mut labels = String::from("sample_id,label\n");
    let mut seen = std::collections::BTreeSet::new();
    for s in samples {
        let dir = root
            .join(s.label.as_str())
            .join(&s.sample_id)
            .join(s.eye_side.as_str());
        fs::create_dir_all(&dir)?;
        for (f, crop) in s.crops.iter().enumerate() {
            crop.to_image().save(dir.join(format!("{f:02}.png")))?;
        }
        if seen.insert(s.sample_id.clone()) {
            labels.push_str(&format!("{},{}\n", s.sample_id, s.label.as_str()));
        }
    }
    fs::write(root.join("labels.csv"), labels)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn training_crops_are_balanced() {
        let items = training_crops(40, 1);
        assert_eq!(items.iter().filter(|i| i.label).count(), 20);
        assert_eq!(
            items
                .iter()
                .filter(|i| i.crop.side == EyeSide::Right)
                .count(),
            20
        );
    }

    #[test]
    fn bench_samples_have_thirteen_frames() {
        let set = bench_set(3, 2, 5);
        assert_eq!(set.len(), 10);
        assert!(set.iter().all(|s| s.crops.len() == BENCH_FRAMES));
        let again = bench_set(3, 2, 5);
        assert_eq!(set[3].crops, again[3].crops);
    }
}
