//! Output directory bookkeeping: every file a run writes is hashed into the
//! run's `manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the run directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: String,
    pub seed: u64,
    pub deterministic: bool,
    pub version: String,
    pub started: String,
    pub finished: String,
    pub config: ExperimentConfig,
    pub files: Vec<FileEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes files under one run directory and remembers their hashes.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    files: Vec<FileEntry>,
    started: String,
}

impl RunDir {
    pub fn create(root: impl Into<PathBuf>) -> CliResult<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| CliError::io(&root, e))?;
        Ok(Self { root, files: Vec::new(), started: now() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.root.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.files.retain(|f| f.path != name);
        self.files.push(FileEntry { path: name.to_string(), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// One JSON document per line.
    pub fn write_jsonl<T: Serialize>(&mut self, name: &str, rows: &[T]) -> CliResult<()> {
        let mut text = String::new();
        for row in rows {
            text.push_str(&serde_json::to_string(row)?);
            text.push('\n');
        }
        self.write(name, text.as_bytes())
    }

    pub fn finish(self, config: &ExperimentConfig) -> CliResult<RunManifest> {
        let manifest = RunManifest {
            experiment: config.experiment.name().to_string(),
            seed: config.seed,
            deterministic: config.experiment.deterministic(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            started: self.started,
            finished: now(),
            config: config.clone(),
            files: self.files,
        };
        let path = self.root.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(manifest)
    }
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}
