//! Eye-blink detection and attention estimation from synchronized video and
//! EEG-band recordings.
//!
//! The pipeline runs: [`ingest`] sessions, pick blink candidates from the
//! EEG blink-strength channel and build a labelled dataset ([`labeler`]),
//! crop eyes ([`eyes`]), train the per-frame CNN ([`classifier`]), turn frame
//! scores into decisions and events ([`scoring`]), evaluate on 13-frame
//! benchmarks ([`evaluation`]) and relate blink rate to attention
//! ([`attention`]). [`synth`] provides seeded data with known ground truth.

pub mod attention;
pub mod classifier;
pub mod evaluation;
pub mod eyes;
pub mod ingest;
pub mod labeler;
pub mod scoring;
pub mod synth;
