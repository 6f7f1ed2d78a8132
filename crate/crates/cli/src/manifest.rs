//! Per-command JSON manifest with content hashes of every file read and
//! written.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Serialize)]
pub struct FileHash {
    pub path: PathBuf,
    pub sha256: String,
}

/// Git-style object hash: SHA-256 over `blob <len>\0` followed by the bytes.
pub fn hash_file(path: &Path) -> std::io::Result<String> {
    let bytes = std::fs::read(path)?;
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(&bytes);
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: &'static str,
    pub status: String,
    pub error: Option<String>,
    pub rng_seed: u64,
    pub threads: usize,
    pub started_unix: u64,
    pub wall_time_s: f64,
    pub config: RunConfig,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    pub summary: serde_json::Value,
}

/// Collects inputs, outputs and a summary while a command runs.
pub struct Recorder {
    pub command: &'static str,
    pub config: RunConfig,
    started: Instant,
    started_unix: u64,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    pub summary: serde_json::Map<String, serde_json::Value>,
}

impl Recorder {
    pub fn new(command: &'static str, config: RunConfig) -> Self {
        Self {
            command,
            config,
            started: Instant::now(),
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            inputs: Vec::new(),
            outputs: Vec::new(),
            summary: serde_json::Map::new(),
        }
    }

    pub fn out_dir(&self) -> &Path {
        &self.config.output_dir
    }

    /// Path of an output file in the output directory, recorded for hashing.
    pub fn output(&mut self, name: &str) -> PathBuf {
        let p = self.config.output_dir.join(name);
        self.outputs.push(p.clone());
        p
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn note(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
        self.summary.insert(key.to_string(), v);
    }

    /// Writes `<command>.manifest.json` and returns its path.
    pub fn finish(self, error: Option<&CliError>) -> Result<PathBuf, CliError> {
        let hashes = |paths: &[PathBuf]| -> Vec<FileHash> {
            paths
                .iter()
                .filter_map(|p| {
                    hash_file(p).ok().map(|sha256| FileHash {
                        path: p.clone(),
                        sha256,
                    })
                })
                .collect()
        };
        let manifest = Manifest {
            command: self.command.to_string(),
            version: env!("CARGO_PKG_VERSION"),
            status: if error.is_some() { "failed" } else { "ok" }.to_string(),
            error: error.map(ToString::to_string),
            rng_seed: self.config.rng_seed,
            threads: rayon::current_num_threads(),
            started_unix: self.started_unix,
            wall_time_s: self.started.elapsed().as_secs_f64(),
            inputs: hashes(&self.inputs),
            outputs: hashes(&self.outputs),
            config: self.config,
            summary: serde_json::Value::Object(self.summary),
        };
        let path = manifest
            .config
            .output_dir
            .join(format!("{}.manifest.json", manifest.command));
        eqfree_core::io::write_json(&path, &manifest)?;
        Ok(path)
    }
}
