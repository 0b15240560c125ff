//! Brute-force reference implementations. They favour obviousness over
//! speed and are what the production routines are checked against.

use crate::attention::{SeriesKind, TimeSeries};
use crate::scoring::{BlinkEvent, EerPoint, ScoreError};

/// Exhaustive equal-error sweep. Every candidate threshold is scored by
/// recounting both classes from scratch.
pub fn oracle_eer(pos: &[f64], neg: &[f64]) -> Result<EerPoint, ScoreError> {
    if pos.is_empty() {
        return Err(ScoreError::EmptyClass("positive"));
    }
    if neg.is_empty() {
        return Err(ScoreError::EmptyClass("negative"));
    }
    let mut all: Vec<f64> = pos.iter().chain(neg).copied().collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    let mut thresholds = vec![all[0] - 1.0, all[all.len() - 1] + 1.0];
    for i in 1..all.len() {
        thresholds.push((all[i - 1] + all[i]) / 2.0);
    }

    let (np, nn) = (pos.len() as u128, neg.len() as u128);
    // (|FPR − FNR|, FPR + FNR) scaled by np·nn so ties compare exactly
    let mut best: Option<(u128, u128, f64, usize, usize)> = None;
    for &t in &thresholds {
        let fp = neg.iter().filter(|&&s| s > t).count();
        let fn_ = pos.iter().filter(|&&s| s <= t).count();
        let a = fp as u128 * np;
        let b = fn_ as u128 * nn;
        let key = (a.abs_diff(b), a + b);
        let better = match best {
            None => true,
            Some((d, s, bt, _, _)) => key < (d, s) || (key == (d, s) && t < bt),
        };
        if better {
            best = Some((key.0, key.1, t, fp, fn_));
        }
    }
    let (_, _, threshold, fp, fn_) = best.expect("at least two thresholds");
    Ok(EerPoint {
        threshold,
        fpr: fp as f64 / neg.len() as f64,
        fnr: fn_ as f64 / pos.len() as f64,
    })
}

/// Literal per-window event count, `count × 60 / window` blinks per minute.
pub fn oracle_bpm(
    events: &[BlinkEvent],
    fps: f64,
    window: f64,
    slide: f64,
    duration: f64,
) -> TimeSeries {
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut k = 0u64;
    loop {
        let t = k as f64 * slide;
        if t + window > duration {
            break;
        }
        let mut count = 0;
        for e in events {
            let start = e.start_frame as f64 / fps;
            if start >= t && start < t + window {
                count += 1;
            }
        }
        times.push(t);
        values.push(count as f64 * 60.0 / window);
        k += 1;
    }
    TimeSeries {
        times,
        values,
        kind: SeriesKind::BlinkRate,
    }
}
