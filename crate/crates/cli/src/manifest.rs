use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

impl Artifact {
    pub fn of(path: &Path) -> Result<Self, CliError> {
        Ok(Artifact { path: path.display().to_string(), sha256: file_digest(path)? })
    }
}

/// Record of one command invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub schema_version: u32,
    pub config_digest: String,
    pub seed: u64,
    pub inputs: Vec<Artifact>,
    /// Paths relative to the output directory.
    pub outputs: Vec<Artifact>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

pub fn file_digest(path: &Path) -> Result<String, CliError> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

pub fn bytes_digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl RunManifest {
    /// Digests `outputs` (relative to `out`) and writes `manifest.json` there.
    pub fn finish(mut self, out: &Path, outputs: &[PathBuf]) -> Result<PathBuf, CliError> {
        let mut rel: Vec<PathBuf> =
            outputs.iter().map(|p| p.strip_prefix(out).map(Path::to_path_buf).unwrap_or_else(|_| p.clone())).collect();
        rel.sort();
        rel.dedup();
        self.outputs = rel
            .iter()
            .map(|r| Ok(Artifact { path: r.display().to_string(), sha256: file_digest(&out.join(r))? }))
            .collect::<Result<_, CliError>>()?;
        self.finished_unix = now_unix();
        let path = out.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(&self)?)?;
        Ok(path)
    }

    pub fn read(dir: &Path) -> Result<Self, CliError> {
        Ok(serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?)
    }

    /// Re-digests every listed output under `dir`.
    pub fn verify(&self, dir: &Path) -> Result<(), CliError> {
        for a in &self.outputs {
            let found = file_digest(&dir.join(&a.path))?;
            if found != a.sha256 {
                return Err(CliError::DigestMismatch(format!("{}: expected {}, found {found}", a.path, a.sha256)));
            }
        }
        Ok(())
    }
}
