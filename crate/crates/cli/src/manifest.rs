use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::Failure;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to rerun a command: its argument vector, the resolved
/// configuration, the seed and digests of every input file.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: Value,
    pub seed: Option<u64>,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<PathBuf>,
    pub summary: Value,
    pub timestamp: String,
    pub version: String,
}

impl RunManifest {
    pub fn new(command: &str, config: Value, seed: Option<u64>) -> Self {
        Self {
            command: command.to_owned(),
            argv: std::env::args().collect(),
            config,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            summary: Value::Null,
            timestamp: chrono::Utc::now().to_rfc3339(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<(), Failure> {
        let bytes = fs::read(path).map_err(|e| Failure::Data(format!("hashing input {}: {e}", path.display())))?;
        self.inputs.push(InputDigest {
            path: path.to_path_buf(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    pub fn write(&self, dir: &Path) -> Result<(), Failure> {
        let path = dir.join(MANIFEST_NAME);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| Failure::Data(format!("writing manifest {}: {e}", path.display())))
    }
}
