//! Run manifest: everything needed to repeat a run and check its outputs.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::format::sha256_file;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub victim_sha256: Option<String>,
    pub outputs: Vec<OutputFile>,
    pub started_unix: f64,
    pub finished_unix: f64,
}

pub fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

impl RunManifest {
    pub fn new(
        command: &str,
        seed: u64,
        config: serde_json::Value,
        victim_sha256: Option<String>,
    ) -> Self {
        let now = unix_now();
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            victim_sha256,
            outputs: Vec::new(),
            started_unix: now,
            finished_unix: now,
        }
    }

    /// Records a written file with its current hash.
    pub fn add_output(&mut self, path: &Path) -> Result<(), CliError> {
        self.outputs.push(OutputFile {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn finish(&mut self) {
        self.finished_unix = unix_now();
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let text = crate::format::to_json(self)?;
        std::fs::write(path, text + "\n").map_err(CliError::io(path))
    }
}
