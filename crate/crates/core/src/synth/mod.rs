//! Seeded generators with known ground truth, and brute-force oracles.

mod bench;
mod eye;
mod face;
mod oracle;
mod session;

pub use bench::{
    bench_sample, bench_set, render_side, training_crops, write_bench, SyntheticBenchSample,
    BENCH_FRAMES,
};
pub use eye::{render_eye, EyeState, RenderedEye, SyntheticEyeSpec};
pub use face::{default_face_box, eye_regions, render_face, BACKGROUND};
pub use oracle::{oracle_bpm, oracle_eer};
pub use session::{
    coupled_blink_times, coupled_rate, epoch_timestamp, gen_session, random_blink_times,
    read_ground_truth, simulate_review, stream_dir, write_ground_truth, AttentionProfile,
    GroundTruthEvent, SynthError, SyntheticSession, SyntheticSessionSpec, MAX_BLINK_FRAMES,
    MIN_BLINK_FRAMES, MIN_BLINK_INTERVAL,
};
