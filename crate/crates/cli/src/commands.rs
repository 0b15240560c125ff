//! Subcommand arguments and their implementations.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand, ValueEnum};
use serde::Serialize;

use blinkwatch::attention::{self, AnalysisParams, FrameScores};
use blinkwatch::classifier::{self, BlinkModel, Checkpoint, EyeMode, ModelConfig, TrainConfig};
use blinkwatch::evaluation::{self, CropMode, EvalMetrics, ReportRow};
use blinkwatch::eyes::{self, CommandAdapter, EyeSide, Frame, LandmarkAdapter, MeanShapeAdapter};
use blinkwatch::ingest::{self, SessionManifest, StreamKind};
use blinkwatch::labeler::{self, DatasetOptions, NegativeBalance};
use blinkwatch::scoring::{self, BlinkEvent, ScoredSample, ThresholdReport};
use blinkwatch::synth::{self, SyntheticSessionSpec};

use crate::review;
use crate::runlog::RunLog;
use crate::{usage, Command};

pub fn dispatch(command: &Command, log: &mut RunLog) -> Result<()> {
    match command {
        Command::ExtractCandidates(a) => extract_candidates(a, log),
        Command::BuildDataset(a) => build_dataset(a, log),
        Command::Train(a) => train(a, log),
        Command::Calibrate(a) => calibrate(a, log),
        Command::Evaluate(a) => evaluate(a, log),
        Command::AttentionReport(a) => attention_report(a, log),
        Command::Synth(a) => match &a.kind {
            SynthKind::Session(s) => synth_session(s, log),
            SynthKind::Eyes(s) => synth_eyes(s, log),
            SynthKind::Bench(s) => synth_bench(s, log),
        },
        Command::ServeReview(a) => review::serve(a),
    }
}

fn load_sessions(paths: &[PathBuf]) -> Result<Vec<SessionManifest>> {
    paths
        .iter()
        .map(|p| {
            let manifest = if p.is_dir() {
                p.join("session.json")
            } else {
                p.clone()
            };
            ingest::load_session(&manifest).with_context(|| format!("session {}", p.display()))
        })
        .collect()
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

// ---------------------------------------------------------------- extract

#[derive(Debug, Args, Serialize)]
pub struct ExtractArgs {
    /// Session directory or session.json (repeatable).
    #[arg(long = "session", required = true)]
    pub sessions: Vec<PathBuf>,
    /// Candidates CSV to write.
    #[arg(long)]
    pub output: PathBuf,
    /// Strength quantile below which peaks are ignored.
    #[arg(long, default_value_t = labeler::DEFAULT_QUANTILE)]
    pub quantile: f64,
}

fn extract_candidates(a: &ExtractArgs, log: &mut RunLog) -> Result<()> {
    if !(a.quantile > 0.0 && a.quantile < 1.0) {
        return Err(usage(format!(
            "--quantile must be in (0, 1), got {}",
            a.quantile
        )));
    }
    let mut all = Vec::new();
    for s in load_sessions(&a.sessions)? {
        let eeg = s.load_eeg()?;
        let found = labeler::extract_candidates(&s.session_id, &eeg, s.fps, a.quantile)?;
        log::info!("{}: {} candidates", s.session_id, found.len());
        all.extend(found);
    }
    labeler::write_candidates(&a.output, &all)?;
    println!("{} candidates -> {}", all.len(), a.output.display());
    log.output(&a.output);
    Ok(())
}

// ---------------------------------------------------------------- dataset

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Balance {
    Global,
    PerSession,
}

#[derive(Debug, Args, Serialize)]
pub struct BuildDatasetArgs {
    #[arg(long = "session", required = true)]
    pub sessions: Vec<PathBuf>,
    #[arg(long)]
    pub candidates: PathBuf,
    #[arg(long)]
    pub decisions: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Frames kept clear around blink windows when sampling negatives.
    #[arg(long, default_value_t = labeler::DEFAULT_MARGIN)]
    pub margin: u64,
    #[arg(long, value_enum, default_value = "global")]
    pub balance: Balance,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Eye box padding as a fraction of the eye width.
    #[arg(long, default_value_t = eyes::DEFAULT_PAD)]
    pub pad: f64,
    /// External landmark program; the built-in mean-shape fitter is used otherwise.
    #[arg(long)]
    pub landmark_command: Option<PathBuf>,
}

fn adapter(command: Option<&PathBuf>) -> Box<dyn LandmarkAdapter> {
    match command {
        Some(p) => Box::new(CommandAdapter {
            program: p.clone(),
            args: Vec::new(),
        }),
        None => Box::new(MeanShapeAdapter::default()),
    }
}

fn build_dataset(a: &BuildDatasetArgs, log: &mut RunLog) -> Result<()> {
    log.seed("negatives", a.seed);
    let sessions = load_sessions(&a.sessions)?;
    let candidates = labeler::read_candidates(&a.candidates)?;
    let decisions = labeler::read_decisions(&a.decisions)?;
    let options = DatasetOptions {
        margin_frames: a.margin,
        balance: match a.balance {
            Balance::Global => NegativeBalance::Global,
            Balance::PerSession => NegativeBalance::PerSession,
        },
        seed: a.seed,
        pad: a.pad,
    };
    let adapter = adapter(a.landmark_command.as_ref());
    let summary = labeler::build_dataset(
        &sessions,
        &candidates,
        &decisions,
        &a.output,
        adapter.as_ref(),
        &options,
    )?;
    println!(
        "{} blink / {} no-blink samples, {} eye images, {} failed, {} dropped",
        summary.blink_samples,
        summary.no_blink_samples,
        summary.eye_images,
        summary.failed_samples.len(),
        summary.dropped_candidates.len()
    );
    log.output(&a.output);
    Ok(())
}

// ---------------------------------------------------------------- train

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Dataset directory written by build-dataset.
    #[arg(long, group = "source")]
    pub dataset: Option<PathBuf>,
    /// Crop directory written by `synth eyes`.
    #[arg(long, group = "source")]
    pub crops: Option<PathBuf>,
    /// Train on this many freshly generated synthetic crops.
    #[arg(long, group = "source")]
    pub synthetic_crops: Option<usize>,
    /// Checkpoint path; per-eye training writes `<stem>.left` and `<stem>.right` variants.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 50)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.2)]
    pub val_fraction: f64,
    #[arg(long, default_value_t = 5)]
    pub patience: usize,
    /// One model for both eyes (default).
    #[arg(long, conflicts_with = "per_eye")]
    pub shared_eyes: bool,
    /// A separate model per eye.
    #[arg(long)]
    pub per_eye: bool,
    #[arg(long, value_delimiter = ',', default_value = "32,32,64")]
    pub conv_filters: Vec<usize>,
    #[arg(long, default_value_t = 64)]
    pub dense_units: usize,
}

fn per_eye_path(path: &Path, side: EyeSide) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.{}.{}", side.as_str(), ext.to_string_lossy()),
        None => format!("{stem}.{}", side.as_str()),
    };
    path.with_file_name(name)
}

fn read_crop_dir(dir: &Path) -> Result<Vec<classifier::TrainingItem>> {
    let labels = dir.join("labels.csv");
    let mut reader =
        csv::Reader::from_path(&labels).with_context(|| format!("reading {}", labels.display()))?;
    let mut items = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        if rec.len() != 3 {
            bail!("{}: expected file,side,state", labels.display());
        }
        let side = EyeSide::parse(rec[1].trim())
            .with_context(|| format!("unknown eye side `{}`", &rec[1]))?;
        let closed = match rec[2].trim() {
            "closed" => true,
            "open" => false,
            other => bail!("unknown eye state `{other}`"),
        };
        let path = dir.join(rec[0].trim());
        let img = image_rgb(&path)?;
        items.push(classifier::TrainingItem {
            crop: eyes::EyeCrop::from_image(side, &img, None)?,
            label: closed,
            group: rec[0].trim().to_string(),
        });
    }
    Ok(items)
}

fn image_rgb(path: &Path) -> Result<image::RgbImage> {
    Ok(image::open(path)
        .with_context(|| format!("opening {}", path.display()))?
        .to_rgb8())
}

fn train(a: &TrainArgs, log: &mut RunLog) -> Result<()> {
    log.seed("train", a.seed);
    let items = match (&a.dataset, &a.crops, a.synthetic_crops) {
        (Some(d), _, _) => labeler::load_training_items(d)?,
        (_, Some(c), _) => read_crop_dir(c)?,
        (_, _, Some(n)) => synth::training_crops(n, a.seed),
        _ => {
            return Err(usage(
                "one of --dataset, --crops or --synthetic-crops is required",
            ))
        }
    };
    let model_config = ModelConfig {
        conv_filters: a.conv_filters.clone(),
        dense_units: a.dense_units,
        ..ModelConfig::default()
    };
    model_config.validate().map_err(|e| usage(e.to_string()))?;
    let base = TrainConfig {
        batch_size: a.batch_size,
        learning_rate: a.lr,
        epochs: a.epochs,
        validation_fraction: a.val_fraction,
        seed: a.seed,
        early_stop_patience: a.patience,
        eye_mode: EyeMode::Shared,
    };
    let runs: Vec<(EyeMode, PathBuf)> = if a.per_eye {
        [EyeSide::Left, EyeSide::Right]
            .into_iter()
            .map(|s| (EyeMode::Single(s), per_eye_path(&a.output, s)))
            .collect()
    } else {
        vec![(EyeMode::Shared, a.output.clone())]
    };
    for (mode, path) in runs {
        let config = TrainConfig {
            eye_mode: mode,
            ..base.clone()
        };
        let outcome = classifier::train(&items, model_config.clone(), &config)?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        outcome.checkpoint.save(&path)?;
        let last = outcome.checkpoint.history.last();
        println!(
            "{}: {} epochs, best epoch {:?}, val accuracy {:?}",
            path.display(),
            outcome.checkpoint.history.len(),
            outcome.checkpoint.best_epoch,
            last.and_then(|e| e.val_accuracy)
        );
        log.output(&path);
    }
    Ok(())
}

// ---------------------------------------------------------------- models

/// One or two checkpoints: a shared model, or a left and a right model.
struct Models(Vec<BlinkModel>);

impl Models {
    fn load(paths: &[PathBuf]) -> Result<Self> {
        if paths.is_empty() || paths.len() > 2 {
            return Err(usage(
                "pass one shared checkpoint or a left and a right checkpoint",
            ));
        }
        let models = paths
            .iter()
            .map(|p| {
                Checkpoint::load(p)
                    .map(|c| c.model)
                    .with_context(|| format!("checkpoint {}", p.display()))
            })
            .collect::<Result<Vec<_>>>()?;
        if models.len() == 2 && models[0].eye_mode() == models[1].eye_mode() {
            bail!("two checkpoints must cover different eyes");
        }
        Ok(Self(models))
    }

    fn for_side(&self, side: EyeSide) -> Option<&BlinkModel> {
        self.0.iter().find(|m| match m.eye_mode() {
            EyeMode::Shared => true,
            EyeMode::Single(s) => s == side,
        })
    }

    fn shared(&self) -> Result<&BlinkModel> {
        match self.0.as_slice() {
            [m] if m.eye_mode() == EyeMode::Shared => Ok(m),
            _ => Err(usage("this command needs a single shared-eye checkpoint")),
        }
    }
}

/// Scores every benchmark sample with the model for its eye.
fn score_bench(
    bench: &evaluation::Benchmark,
    models: &Models,
    threshold: f64,
    mode: CropMode<'_>,
) -> Result<evaluation::EvalOutcome> {
    let mut scored = Vec::new();
    let mut skipped = Vec::new();
    for side in [EyeSide::Left, EyeSide::Right] {
        let samples: Vec<_> = bench
            .samples
            .iter()
            .filter(|s| s.eye_side == side)
            .cloned()
            .collect();
        if samples.is_empty() {
            continue;
        }
        let Some(model) = models.for_side(side) else {
            log::warn!(
                "no model for the {side} eye; {} samples skipped",
                samples.len()
            );
            continue;
        };
        let out = evaluation::evaluate(&samples, model, threshold, mode)?;
        scored.extend(out.scored);
        skipped.extend(out.skipped);
    }
    Ok(evaluation::EvalOutcome {
        metrics: evaluation::metrics_from_scored(&scored, threshold),
        scored,
        skipped,
    })
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CropArg {
    /// Frames are eye crops already.
    Whole,
    /// Frames show faces; eyes are located with landmarks.
    Landmarks,
}

fn crop_mode<'a>(arg: CropArg, adapter: &'a dyn LandmarkAdapter, pad: f64) -> CropMode<'a> {
    match arg {
        CropArg::Whole => CropMode::WholeImage,
        CropArg::Landmarks => CropMode::Landmarks { adapter, pad },
    }
}

// ---------------------------------------------------------------- calibrate

#[derive(Debug, Args, Serialize)]
pub struct CalibrateArgs {
    /// Scores CSV (`sample_id,frame_offset,score,label`).
    #[arg(long, conflicts_with_all = ["checkpoint", "bench"])]
    pub scores: Option<PathBuf>,
    #[arg(long, requires = "bench")]
    pub checkpoint: Vec<PathBuf>,
    /// Benchmark directory to score with `--checkpoint`.
    #[arg(long, requires = "checkpoint")]
    pub bench: Option<PathBuf>,
    /// Name of the calibration split, recorded in the report.
    #[arg(long, default_value = "calibration")]
    pub split: String,
    /// Threshold report JSON to write.
    #[arg(long)]
    pub output: PathBuf,
    /// Also write the per-frame scores of `--bench`.
    #[arg(long)]
    pub scores_out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "whole")]
    pub crop_mode: CropArg,
}

fn calibrate(a: &CalibrateArgs, log: &mut RunLog) -> Result<()> {
    let samples: Vec<ScoredSample> = match (&a.scores, &a.bench) {
        (Some(path), _) => scoring::read_scores(path)?,
        (None, Some(bench)) => {
            let models = Models::load(&a.checkpoint)?;
            let b = evaluation::load_benchmark(bench)?;
            let adapter = MeanShapeAdapter::default();
            let out = score_bench(
                &b,
                &models,
                0.5,
                crop_mode(a.crop_mode, &adapter, eyes::DEFAULT_PAD),
            )?;
            out.scored
                .into_iter()
                .map(|(side, mut s)| {
                    s.sample_id = format!("{}/{}", s.sample_id, side.as_str());
                    s
                })
                .collect()
        }
        (None, None) => return Err(usage("pass --scores or --checkpoint with --bench")),
    };
    if let Some(path) = &a.scores_out {
        scoring::write_scores(path, &samples)?;
        log.output(path);
    }
    let report = scoring::calibrate_samples(&samples, &a.split)?;
    report.save(&a.output)?;
    println!(
        "threshold {:.6} (FPR {:.4}, FNR {:.4}) from {} blink / {} no-blink samples",
        report.threshold, report.fpr, report.fnr, report.n_pos, report.n_neg
    );
    log.output(&a.output);
    Ok(())
}

// ---------------------------------------------------------------- evaluate

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub bench: PathBuf,
    /// One shared checkpoint, or a left and a right checkpoint.
    #[arg(long, required = true)]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long)]
    pub threshold_report: PathBuf,
    /// Published comparison rows, CSV `method,eye,recall,precision,f1`.
    #[arg(long)]
    pub baselines: Option<PathBuf>,
    /// Directory for metrics.json, report.txt and report.json.
    #[arg(long)]
    pub output: PathBuf,
    /// Method name for the evaluated rows.
    #[arg(long, default_value = "Ours")]
    pub method: String,
    #[arg(long, value_enum, default_value = "whole")]
    pub crop_mode: CropArg,
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    threshold: f64,
    calibration_split: &'a str,
    metrics: &'a [EvalMetrics],
    malformed: &'a [evaluation::MalformedSample],
    skipped: &'a [evaluation::SkippedSample],
}

fn evaluate(a: &EvaluateArgs, log: &mut RunLog) -> Result<()> {
    let models = Models::load(&a.checkpoint)?;
    let threshold = ThresholdReport::load(&a.threshold_report)
        .with_context(|| format!("threshold report {}", a.threshold_report.display()))?;
    let bench = evaluation::load_benchmark(&a.bench)?;
    let baselines = match &a.baselines {
        Some(p) => evaluation::read_baselines(p)?,
        None => Vec::new(),
    };
    let adapter = MeanShapeAdapter::default();
    let outcome = score_bench(
        &bench,
        &models,
        threshold.threshold,
        crop_mode(a.crop_mode, &adapter, eyes::DEFAULT_PAD),
    )?;
    let rows: Vec<ReportRow> = outcome
        .metrics
        .iter()
        .map(|m| ReportRow::evaluated(&a.method, m))
        .collect();
    let report = evaluation::render_report(&rows, &baselines);
    for w in &report.warnings {
        log::warn!("{w}");
    }

    fs::create_dir_all(&a.output)?;
    let metrics_path = a.output.join("metrics.json");
    write_json(
        &metrics_path,
        &MetricsFile {
            threshold: threshold.threshold,
            calibration_split: &threshold.calibration_split,
            metrics: &outcome.metrics,
            malformed: &bench.malformed,
            skipped: &outcome.skipped,
        },
    )?;
    let text_path = a.output.join("report.txt");
    fs::write(&text_path, &report.text)?;
    let json_path = a.output.join("report.json");
    write_json(&json_path, &report.json)?;
    print!("{}", report.text);
    for p in [&metrics_path, &text_path, &json_path] {
        log.output(p);
    }
    Ok(())
}

// ---------------------------------------------------------------- attention

#[derive(Debug, Args, Serialize)]
pub struct AttentionArgs {
    #[arg(long = "session", required = true)]
    pub sessions: Vec<PathBuf>,
    /// Shared-eye checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub threshold_report: PathBuf,
    /// Reviewed candidates; accepted ones are the ground-truth blinks.
    /// Without them a session's ground_truth.csv is used when present.
    #[arg(long, requires = "decisions")]
    pub candidates: Option<PathBuf>,
    #[arg(long, requires = "candidates")]
    pub decisions: Option<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = eyes::DEFAULT_PAD)]
    pub pad: f64,
    #[arg(long)]
    pub landmark_command: Option<PathBuf>,
}

fn ground_truth(
    session: &SessionManifest,
    session_dir: &Path,
    reviewed: Option<&[labeler::BlinkCandidate]>,
) -> Result<Vec<BlinkEvent>> {
    if let Some(cands) = reviewed {
        let own: Vec<_> = cands
            .iter()
            .filter(|c| c.session_id == session.session_id)
            .cloned()
            .collect();
        return Ok(attention::candidate_events(&own));
    }
    let path = session_dir.join("ground_truth.csv");
    if !path.is_file() {
        log::warn!("{}: no ground truth available", session.session_id);
        return Ok(Vec::new());
    }
    Ok(synth::read_ground_truth(&path)?
        .into_iter()
        .map(|e| BlinkEvent {
            start_frame: e.start_frame,
            end_frame: e.end_frame,
            peak_score: 1.0,
            long_closure: false,
        })
        .collect())
}

fn attention_report(a: &AttentionArgs, log: &mut RunLog) -> Result<()> {
    let models = Models::load(std::slice::from_ref(&a.checkpoint))?;
    let model = models.shared()?;
    let threshold = ThresholdReport::load(&a.threshold_report)?.threshold;
    let reviewed = match (&a.candidates, &a.decisions) {
        (Some(c), Some(d)) => {
            let (applied, unknown) = labeler::apply_decisions(
                &labeler::read_candidates(c)?,
                &labeler::read_decisions(d)?,
            );
            if !unknown.is_empty() {
                log::warn!("{} decisions name unknown candidates", unknown.len());
            }
            Some(applied)
        }
        _ => None,
    };
    let adapter = adapter(a.landmark_command.as_ref());
    let params = AnalysisParams::default();
    let mut analyses = Vec::new();
    for (path, session) in a.sessions.iter().zip(load_sessions(&a.sessions)?) {
        let dir = if path.is_dir() {
            path.clone()
        } else {
            path.parent().map(Path::to_path_buf).unwrap_or_default()
        };
        let stream = session
            .stream(StreamKind::Rgb)
            .with_context(|| format!("{}: no rgb stream", session.session_id))?;
        let scores: FrameScores = attention::score_frames_with(
            stream.frame_count,
            |f| Frame::open(&stream.frame_path(f), None),
            model,
            adapter.as_ref(),
            a.pad,
        )?;
        let eeg = session.load_eeg()?;
        let gt = ground_truth(&session, &dir, reviewed.as_deref())?;
        let analysis = attention::analyze_session(
            &session.session_id,
            &eeg,
            &scores,
            session.fps,
            &gt,
            threshold,
            &params,
        )?;
        println!(
            "{}: r = {}, {} events, mean |Δbpm| {:.2}",
            analysis.session_id,
            analysis
                .correlation
                .r
                .map(|r| format!("{r:.3}"))
                .unwrap_or_else(|| "n/a".into()),
            analysis.estimated_events.len(),
            analysis.mean_abs_bpm_difference
        );
        analyses.push(analysis);
    }
    attention::write_attention_report(&analyses, &params, &a.output)?;
    log.output(&a.output);
    Ok(())
}

// ---------------------------------------------------------------- synth

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[command(subcommand)]
    pub kind: SynthKind,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum SynthKind {
    /// A full session: EEG trace, ground truth and rendered frames.
    Session(SynthSessionArgs),
    /// Labelled open/closed eye crops.
    Eyes(SynthEyesArgs),
    /// A 13-frame benchmark in the evaluation layout.
    Bench(SynthBenchArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SynthSessionArgs {
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value = "synthetic")]
    pub session_id: String,
    /// Seconds.
    #[arg(long, default_value_t = 240.0)]
    pub duration: f64,
    /// Number of blinks at random times; otherwise blinks follow attention.
    #[arg(long, conflicts_with_all = ["coupling", "base_bpm"])]
    pub blinks: Option<usize>,
    /// Blink-rate change per unit of normalized attention.
    #[arg(long, allow_hyphen_values = true)]
    pub coupling: Option<f64>,
    #[arg(long)]
    pub base_bpm: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write EEG and ground truth only.
    #[arg(long)]
    pub no_frames: bool,
    #[arg(long, default_value_t = 320)]
    pub width: u32,
    #[arg(long, default_value_t = 240)]
    pub height: u32,
    /// Comma-separated streams: rgb, nir_left, nir_right (any case).
    #[arg(long, value_delimiter = ',', default_value = "rgb")]
    pub streams: Vec<String>,
    #[arg(long, default_value_t = ingest::DEFAULT_FPS)]
    pub fps: f64,
}

fn synth_session(a: &SynthSessionArgs, log: &mut RunLog) -> Result<()> {
    log.seed("session", a.seed);
    if !(a.duration > 0.0) || !(a.fps > 0.0) {
        return Err(usage("--duration and --fps must be positive"));
    }
    let streams = a
        .streams
        .iter()
        .map(|s| {
            StreamKind::parse(&s.trim().to_uppercase())
                .ok_or_else(|| usage(format!("unknown stream `{s}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut spec = match a.blinks {
        Some(n) => {
            let times = synth::random_blink_times(n, a.duration, a.seed)
                .map_err(|e| usage(e.to_string()))?;
            SyntheticSessionSpec::new(&a.session_id, a.duration, times, a.seed)
        }
        None => SyntheticSessionSpec::coupled(
            &a.session_id,
            a.duration,
            a.coupling.unwrap_or(-0.8),
            a.base_bpm.unwrap_or(18.0),
            a.seed,
        ),
    };
    spec.fps = a.fps;
    spec.resolution = (a.width, a.height);
    spec.streams = streams;
    let session = synth::gen_session(&spec)?;
    let manifest = session.write(&a.output, !a.no_frames)?;
    write_json(&a.output.join("spec.json"), &spec)?;
    println!(
        "{}: {} frames, {} blinks -> {}",
        spec.session_id,
        session.frame_count,
        session.events.len(),
        a.output.display()
    );
    log.output(&manifest);
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct SynthEyesArgs {
    /// Number of crops; half are closed.
    #[arg(long, default_value_t = 200)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: PathBuf,
}

fn synth_eyes(a: &SynthEyesArgs, log: &mut RunLog) -> Result<()> {
    log.seed("eyes", a.seed);
    fs::create_dir_all(&a.output)?;
    let mut labels = String::from("file,side,state\n");
    for (i, item) in synth::training_crops(a.count, a.seed).iter().enumerate() {
        let state = if item.label { "closed" } else { "open" };
        let name = format!("{i:05}_{}_{state}.png", item.crop.side.as_str());
        item.crop.to_image().save(a.output.join(&name))?;
        labels.push_str(&format!("{name},{},{state}\n", item.crop.side.as_str()));
    }
    fs::write(a.output.join("labels.csv"), labels)?;
    println!("{} crops -> {}", a.count, a.output.display());
    log.output(&a.output);
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct SynthBenchArgs {
    #[arg(long, default_value_t = 50)]
    pub blinks: usize,
    #[arg(long, default_value_t = 50)]
    pub no_blinks: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: PathBuf,
}

fn synth_bench(a: &SynthBenchArgs, log: &mut RunLog) -> Result<()> {
    log.seed("bench", a.seed);
    let samples = synth::bench_set(a.blinks, a.no_blinks, a.seed);
    fs::create_dir_all(&a.output)?;
    synth::write_bench(&a.output, &samples)?;
    println!(
        "{} blink / {} no-blink samples -> {}",
        a.blinks,
        a.no_blinks,
        a.output.display()
    );
    log.output(&a.output);
    Ok(())
}

// ---------------------------------------------------------------- review

#[derive(Debug, Args, Serialize)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long)]
    pub candidates: PathBuf,
    /// Append-only decisions CSV; created on first decision.
    #[arg(long)]
    pub decisions: PathBuf,
    /// Directory holding `<session_id>/` frame folders.
    #[arg(long)]
    pub frames_root: PathBuf,
    /// Built review UI to serve at `/`.
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
}
