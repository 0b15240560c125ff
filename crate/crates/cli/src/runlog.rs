//! Machine-readable record of one CLI invocation.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct Versions {
    pub blinkwatch: &'static str,
    pub checkpoint_format: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunLog {
    pub command: String,
    pub config: serde_json::Value,
    pub versions: Versions,
    pub seeds: BTreeMap<String, u64>,
    pub outputs: Vec<String>,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub exit_code: Option<i32>,
    pub error: Option<String>,
}

fn stamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl RunLog {
    pub fn start(command: &str, config: serde_json::Value) -> Self {
        Self {
            command: command.to_string(),
            config,
            versions: Versions {
                blinkwatch: env!("CARGO_PKG_VERSION"),
                checkpoint_format: blinkwatch::classifier::CHECKPOINT_VERSION,
            },
            seeds: BTreeMap::new(),
            outputs: Vec::new(),
            started_at: stamp(Utc::now()),
            finished_at: None,
            exit_code: None,
            error: None,
        }
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.to_string(), value);
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn finish(&mut self, exit_code: i32, error: Option<String>) {
        self.finished_at = Some(stamp(Utc::now()));
        self.exit_code = Some(exit_code);
        self.error = error;
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("run log serializes")
    }
}
