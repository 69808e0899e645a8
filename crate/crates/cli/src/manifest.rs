use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::error::CliError;

pub const ARTIFACT: &str = "qvetrain";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    /// File name relative to the output directory.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub master_seed: u64,
    pub run_seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact: String,
    pub version: String,
    pub command: String,
    pub config: Config,
    pub seeds: Vec<SeedRecord>,
    pub workers: Option<usize>,
    pub started_at: String,
    pub finished_at: String,
    pub outputs: Vec<OutputEntry>,
}

impl RunManifest {
    pub fn file_name(command: &str) -> String {
        format!("{command}_manifest.json")
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(CliError::io(path))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Writes output files one at a time and records their hashes.
pub struct OutputDir {
    pub dir: PathBuf,
    pub entries: Vec<OutputEntry>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            entries: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(CliError::io(&path))?;
        self.entries.retain(|e| e.path != name);
        self.entries.push(OutputEntry {
            path: name.to_string(),
            bytes: bytes.len() as u64,
            sha256: sha256_hex(bytes),
        });
        Ok(path)
    }

    pub fn write_manifest(&self, manifest: &RunManifest) -> Result<PathBuf, CliError> {
        let path = self.dir.join(RunManifest::file_name(&manifest.command));
        let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(CliError::io(&path))?;
        Ok(path)
    }
}
