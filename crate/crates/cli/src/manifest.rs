//! Append-only run manifests: every command that writes an output file also
//! appends one JSON line to `manifest.jsonl` in the output's directory.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub tool_version: &'static str,
    pub wall_ms: u128,
}

pub struct ManifestWriter {
    command: String,
    config: serde_json::Value,
    seeds: Vec<u64>,
    inputs: Vec<String>,
    outputs: Vec<PathBuf>,
    started: Instant,
}

impl ManifestWriter {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        ManifestWriter {
            command: command.to_string(),
            config,
            seeds: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn seed(&mut self, seed: u64) -> &mut Self {
        self.seeds.push(seed);
        self
    }

    pub fn input(&mut self, path: &Path) -> &mut Self {
        self.inputs.push(path.display().to_string());
        self
    }

    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.outputs.push(path.to_path_buf());
        self
    }

    /// Append one line per directory that received outputs.
    pub fn commit(self) -> selconf::Result<()> {
        if self.outputs.is_empty() {
            return Ok(());
        }
        let manifest = RunManifest {
            command: self.command,
            config: self.config,
            seeds: self.seeds,
            inputs: self.inputs,
            outputs: self
                .outputs
                .iter()
                .map(|p| p.display().to_string())
                .collect(),
            tool_version: env!("CARGO_PKG_VERSION"),
            wall_ms: self.started.elapsed().as_millis(),
        };
        let line = serde_json::to_string(&manifest)
            .map_err(|e| selconf::Error::Io(std::io::Error::other(e)))?;
        let mut dirs: Vec<PathBuf> = self
            .outputs
            .iter()
            .map(|p| p.parent().unwrap_or(Path::new(".")).to_path_buf())
            .collect();
        dirs.sort();
        dirs.dedup();
        for dir in dirs {
            let mut file = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(dir.join("manifest.jsonl"))?;
            writeln!(file, "{line}")?;
        }
        Ok(())
    }
}
