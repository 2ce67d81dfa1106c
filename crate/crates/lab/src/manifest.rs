//! Run manifests: what was run, with which inputs, producing which files.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::LabError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// sha256 over the crate version, the command and the resolved config.
    pub input_hash: String,
    pub config: String,
    pub seeds: Vec<u64>,
    pub versions: BTreeMap<String, String>,
    pub threads: usize,
    pub wall_clock_s: f64,
    pub outputs: Vec<OutputFile>,
}

pub fn versions() -> BTreeMap<String, String> {
    let mut v = BTreeMap::new();
    v.insert("stochsn".to_string(), env!("CARGO_PKG_VERSION").to_string());
    v.insert("stochsn-core".to_string(), env!("CARGO_PKG_VERSION").to_string());
    v
}

pub fn input_hash(command: &str, cfg: &Config) -> String {
    let mut h = Sha256::new();
    h.update(format!("stochsn {}\n", env!("CARGO_PKG_VERSION")));
    h.update(format!("command={command}\n"));
    h.update(cfg.to_toml());
    hex::encode(h.finalize())
}

pub fn file_sha256(path: &Path) -> Result<String, LabError> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<(), LabError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| LabError::Config(e.to_string()))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, LabError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| LabError::Config(e.to_string()))
    }
}
