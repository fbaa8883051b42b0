//! Adapter serving precomputed outputs of an external auditory model.
//!
//! On disk a corpus is a JSON manifest plus one WAV input and one target file
//! per entry. Target files hold a 16-byte header followed by `J × T`
//! little-endian `f32` values in row-major order:
//!
//! | bytes | content              |
//! |-------|----------------------|
//! | 0..4  | magic `FMTG`         |
//! | 4..8  | format version (u32) |
//! | 8..12 | `J` (u32)            |
//! | 12..16| `T` (u32)            |
//!
//! Lookups are keyed by the model digest and the input samples quantised to
//! the `f32` values stored in the WAV, so an input only ever resolves to targets
//! produced by the model it was registered under.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AuditoryModel, InnerRepresentation, ModelError};
use crate::digest::Hasher;
use crate::matrix::Matrix;
use crate::signals::{read_wav, write_wav, WavCalibration, Waveform};

pub const TARGET_MAGIC: [u8; 4] = *b"FMTG";
pub const TARGET_VERSION: u32 = 1;
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub input_wav_path: String,
    pub target_path: String,
    pub model_digest: String,
    pub spl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub format_version: u32,
    pub model_digest: String,
    pub sample_rate: u32,
    pub cfs: Vec<f64>,
    pub calibration: WavCalibration,
    pub entries: Vec<CorpusEntry>,
}

/// Writes a target matrix in the corpus target format.
pub fn write_target(path: &Path, m: &Matrix) -> Result<(), ModelError> {
    let (j, t) = m.shape();
    let mut bytes = Vec::with_capacity(16 + 4 * j * t);
    bytes.extend_from_slice(&TARGET_MAGIC);
    bytes.extend_from_slice(&TARGET_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(j as u32).to_le_bytes());
    bytes.extend_from_slice(&(t as u32).to_le_bytes());
    for &v in m.as_slice() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Reads a target file. Values are widened from `f32` exactly.
pub fn read_target(path: &Path) -> Result<Matrix, ModelError> {
    let bytes = fs::read(path)?;
    let bad = |m: &str| ModelError::CorpusFormat(format!("{}: {m}", path.display()));
    if bytes.len() < 16 || bytes[..4] != TARGET_MAGIC {
        return Err(bad("missing target header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    if word(4) != TARGET_VERSION {
        return Err(bad("unsupported target version"));
    }
    let (j, t) = (word(8) as usize, word(12) as usize);
    if bytes.len() != 16 + 4 * j * t {
        return Err(bad("payload length does not match header"));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Ok(Matrix::from_vec(j, t, data))
}

fn lookup_key(model_digest: &str, x: &Waveform, calibration: WavCalibration) -> String {
    Hasher::new()
        .str("corpus-key")
        .str(model_digest)
        .u64(x.sample_rate() as u64)
        .f32s(x.samples().iter().map(|&v| (v / calibration.full_scale_pa) as f32))
        .finish()
}

/// Read-only lookup table from inputs to stored targets.
#[derive(Debug, Clone)]
pub struct CorpusAdapter {
    manifest: CorpusManifest,
    targets: HashMap<String, Matrix>,
    inputs: Vec<Waveform>,
}

impl CorpusAdapter {
    /// Loads every entry of the manifest into memory.
    pub fn load(manifest_path: &Path) -> Result<Self, ModelError> {
        let text = fs::read_to_string(manifest_path)?;
        let manifest: CorpusManifest =
            serde_json::from_str(&text).map_err(|e| ModelError::CorpusFormat(e.to_string()))?;
        if manifest.format_version != MANIFEST_VERSION {
            return Err(ModelError::CorpusFormat(format!("unsupported manifest version {}", manifest.format_version)));
        }
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let mut targets = HashMap::new();
        let mut inputs = Vec::with_capacity(manifest.entries.len());
        for entry in &manifest.entries {
            if entry.model_digest != manifest.model_digest {
                return Err(ModelError::DigestMismatch {
                    expected: manifest.model_digest.clone(),
                    found: entry.model_digest.clone(),
                });
            }
            let x = read_wav(&base.join(&entry.input_wav_path), manifest.calibration, manifest.sample_rate)?;
            let target = read_target(&base.join(&entry.target_path))?;
            if target.rows() != manifest.cfs.len() || target.cols() != x.len() {
                return Err(ModelError::CorpusFormat(format!(
                    "{}: target is {}x{}, expected {}x{}",
                    entry.target_path,
                    target.rows(),
                    target.cols(),
                    manifest.cfs.len(),
                    x.len()
                )));
            }
            targets.insert(lookup_key(&manifest.model_digest, &x, manifest.calibration), target);
            inputs.push(x);
        }
        Ok(Self { manifest, targets, inputs })
    }

    /// Writes `items` as a corpus under `dir` and returns the manifest path.
    pub fn write(
        dir: &Path,
        model_digest: &str,
        cfs: &[f64],
        sample_rate: u32,
        calibration: WavCalibration,
        items: &[(Waveform, InnerRepresentation, f64)],
    ) -> Result<PathBuf, ModelError> {
        fs::create_dir_all(dir)?;
        let mut entries = Vec::with_capacity(items.len());
        for (i, (x, target, spl)) in items.iter().enumerate() {
            let input_wav_path = format!("input_{i:05}.wav");
            let target_path = format!("target_{i:05}.f32");
            write_wav(&dir.join(&input_wav_path), x, calibration)?;
            write_target(&dir.join(&target_path), target.channels())?;
            entries.push(CorpusEntry { input_wav_path, target_path, model_digest: model_digest.to_string(), spl: *spl });
        }
        let manifest = CorpusManifest {
            format_version: MANIFEST_VERSION,
            model_digest: model_digest.to_string(),
            sample_rate,
            cfs: cfs.to_vec(),
            calibration,
            entries,
        };
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest).expect("manifest serialises"))?;
        Ok(path)
    }

    pub fn manifest(&self) -> &CorpusManifest {
        &self.manifest
    }

    /// Inputs in manifest order, as read from disk.
    pub fn inputs(&self) -> &[Waveform] {
        &self.inputs
    }
}

impl AuditoryModel for CorpusAdapter {
    fn forward(&self, x: &Waveform) -> Result<InnerRepresentation, ModelError> {
        let key = lookup_key(&self.manifest.model_digest, x, self.manifest.calibration);
        let m = self.targets.get(&key).ok_or_else(|| ModelError::NotInCorpus(key.clone()))?;
        InnerRepresentation::new(m.clone(), self.manifest.cfs.clone())
    }

    fn cfs(&self) -> &[f64] {
        &self.manifest.cfs
    }

    fn sample_rate(&self) -> u32 {
        self.manifest.sample_rate
    }

    fn digest(&self) -> String {
        self.manifest.model_digest.clone()
    }
}
