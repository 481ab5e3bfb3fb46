use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Config, Seeds};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileHash {
    pub fn of(path: &Path) -> Result<FileHash> {
        let bytes = fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
        Ok(FileHash { path: path.to_path_buf(), sha256: sha256_hex(&bytes) })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// What one stage read, wrote and was configured with.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub stage: String,
    /// Command line after the program name.
    pub args: Vec<String>,
    pub config: Config,
    pub seeds: Seeds,
    pub threads: usize,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    pub timings_ms: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn path_for(out_dir: &Path, stage: &str) -> PathBuf {
        out_dir.join("manifests").join(format!("{stage}.json"))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).with_context(|| format!("writing manifest {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<RunManifest> {
        let text = fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}
