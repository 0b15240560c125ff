//! Checkpoint archive: a tar file holding `model.json` plus one
//! little-endian `f32` blob per parameter tensor under `weights/`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BlinkModel, ClassifierError, EpochStats, EyeMode, Layout, ModelConfig, TrainConfig};

/// `major.minor`; readers accept any minor version of their major.
pub const CHECKPOINT_VERSION: &str = "1.0";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub version: String,
    pub model: BlinkModel,
    pub train_config: TrainConfig,
    pub history: Vec<EpochStats>,
    pub best_epoch: Option<usize>,
    pub dataset_fingerprint: String,
    pub input_normalization: String,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    file: String,
}

#[derive(Serialize, Deserialize)]
struct ModelJson {
    format_version: String,
    model_config: ModelConfig,
    eye_mode: EyeMode,
    train_config: TrainConfig,
    history: Vec<EpochStats>,
    best_epoch: Option<usize>,
    dataset_fingerprint: String,
    input_normalization: String,
    tensors: Vec<TensorEntry>,
}

fn err(m: impl std::fmt::Display) -> ClassifierError {
    ClassifierError::Checkpoint(m.to_string())
}

fn major(version: &str) -> Option<u32> {
    version.split('.').next()?.parse().ok()
}

impl Checkpoint {
    /// Wraps an untrained model.
    pub fn untrained(model: BlinkModel, train_config: TrainConfig) -> Self {
        Self {
            version: CHECKPOINT_VERSION.into(),
            model,
            train_config,
            history: Vec::new(),
            best_epoch: None,
            dataset_fingerprint: String::new(),
            input_normalization: "pixel values scaled to [0, 1]".into(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), ClassifierError> {
        let layout = self.model.layout();
        let meta = ModelJson {
            format_version: self.version.clone(),
            model_config: self.model.config().clone(),
            eye_mode: self.model.eye_mode(),
            train_config: self.train_config.clone(),
            history: self.history.clone(),
            best_epoch: self.best_epoch,
            dataset_fingerprint: self.dataset_fingerprint.clone(),
            input_normalization: self.input_normalization.clone(),
            tensors: layout
                .segments()
                .iter()
                .map(|s| TensorEntry {
                    name: s.name.clone(),
                    shape: s.shape.clone(),
                    file: format!("weights/{}.f32", s.name),
                })
                .collect(),
        };
        let json = serde_json::to_vec_pretty(&meta).map_err(err)?;

        let mut builder = tar::Builder::new(BufWriter::new(File::create(path)?));
        let mut append = |name: &str, data: &[u8]| -> std::io::Result<()> {
            let mut header = tar::Header::new_gnu();
            header.set_size(data.len() as u64);
            header.set_mode(0o644);
            header.set_mtime(0);
            header.set_cksum();
            builder.append_data(&mut header, name, data)
        };
        append("model.json", &json)?;
        for (seg, entry) in layout.segments().iter().zip(&meta.tensors) {
            let bytes: Vec<u8> = self.model.params()[seg.range()]
                .iter()
                .flat_map(|v| v.to_le_bytes())
                .collect();
            append(&entry.file, &bytes)?;
        }
        builder
            .into_inner()?
            .into_inner()
            .map_err(|e| e.into_error())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ClassifierError> {
        let mut archive = tar::Archive::new(BufReader::new(File::open(path)?));
        let mut meta: Option<ModelJson> = None;
        let mut blobs = std::collections::HashMap::new();
        for entry in archive.entries()? {
            let mut entry = entry?;
            let name = entry.path()?.to_string_lossy().into_owned();
            let mut data = Vec::new();
            entry.read_to_end(&mut data)?;
            if name == "model.json" {
                meta = Some(serde_json::from_slice(&data).map_err(err)?);
            } else {
                blobs.insert(name, data);
            }
        }
        let meta = meta.ok_or_else(|| err("archive has no model.json"))?;
        match major(&meta.format_version) {
            Some(m) if Some(m) == major(CHECKPOINT_VERSION) => {}
            _ => {
                return Err(err(format!(
                    "unsupported checkpoint version {} (reader is {CHECKPOINT_VERSION})",
                    meta.format_version
                )))
            }
        }
        meta.model_config.validate()?;
        let layout = Layout::new(&meta.model_config);
        let mut params = vec![0.0f32; layout.param_count()];
        for seg in layout.segments() {
            let entry = meta
                .tensors
                .iter()
                .find(|t| t.name == seg.name)
                .ok_or_else(|| err(format!("missing tensor {}", seg.name)))?;
            if entry.shape != seg.shape {
                return Err(err(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    seg.name, entry.shape, seg.shape
                )));
            }
            let data = blobs
                .get(&entry.file)
                .ok_or_else(|| err(format!("missing blob {}", entry.file)))?;
            if data.len() != seg.len() * 4 {
                return Err(err(format!(
                    "blob {} has {} bytes, expected {}",
                    entry.file,
                    data.len(),
                    seg.len() * 4
                )));
            }
            for (p, b) in params[seg.range()].iter_mut().zip(data.chunks_exact(4)) {
                *p = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
            }
        }
        Ok(Self {
            version: meta.format_version,
            model: BlinkModel::from_parts(meta.model_config, meta.eye_mode, params)?,
            train_config: meta.train_config,
            history: meta.history,
            best_epoch: meta.best_epoch,
            dataset_fingerprint: meta.dataset_fingerprint,
            input_normalization: meta.input_normalization,
        })
    }
}
