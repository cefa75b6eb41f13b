use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Result, RunConfig};

/// What is needed to repeat a CLI run exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub version: String,
    pub config: RunConfig,
    /// Files written by the run, relative to its output directory.
    pub outputs: Vec<String>,
}

pub fn config_hash(cfg: &RunConfig) -> String {
    hex::encode(Sha256::digest(cfg.to_json().as_bytes()))
}

impl RunManifest {
    pub fn new(command: &str, cfg: &RunConfig, outputs: Vec<String>) -> Self {
        Self {
            command: command.to_string(),
            config_sha256: config_hash(cfg),
            seed: cfg.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: cfg.clone(),
            outputs,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("run_manifest.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}
