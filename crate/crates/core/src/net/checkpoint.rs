//! Binary checkpoints.
//!
//! | bytes     | content                                   |
//! |-----------|-------------------------------------------|
//! | 0..8      | magic `FMAECKP1`                          |
//! | 8..40     | SHA-256 of the canonical spec JSON        |
//! | 40..48    | initialisation seed (u64 LE)              |
//! | 48..56    | optimiser step (u64 LE)                   |
//! | 56..64    | parameter count `n` (u64 LE)              |
//! | 64..      | `n` parameters as f64 LE, in spec order   |

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{NetError, NetworkSpec, ParameterSet};

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"FMAECKP1";

pub fn spec_digest(spec: &NetworkSpec) -> [u8; 32] {
    Sha256::digest(spec.to_json().as_bytes()).into()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParameterSet<f64>,
    pub step: u64,
}

pub fn save_checkpoint(path: &Path, spec: &NetworkSpec, params: &ParameterSet<f64>, step: u64) -> Result<(), NetError> {
    if params.values.len() != spec.param_count() {
        return Err(NetError::ShapeMismatch { expected: spec.param_count(), got: params.values.len() });
    }
    let mut bytes = Vec::with_capacity(64 + 8 * params.values.len());
    bytes.extend_from_slice(&CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&spec_digest(spec));
    bytes.extend_from_slice(&params.rng_seed.to_le_bytes());
    bytes.extend_from_slice(&step.to_le_bytes());
    bytes.extend_from_slice(&(params.values.len() as u64).to_le_bytes());
    for v in &params.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path, spec: &NetworkSpec) -> Result<Checkpoint, NetError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 64 || bytes[..8] != CHECKPOINT_MAGIC {
        return Err(NetError::Checkpoint(format!("{}: not a checkpoint", path.display())));
    }
    if bytes[8..40] != spec_digest(spec) {
        return Err(NetError::SpecDigestMismatch);
    }
    let word = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().expect("8 bytes"));
    let (seed, step, n) = (word(40), word(48), word(56) as usize);
    if n != spec.param_count() || bytes.len() != 64 + 8 * n {
        return Err(NetError::Checkpoint(format!("{}: truncated or mis-sized payload", path.display())));
    }
    let values = bytes[64..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok(Checkpoint { params: ParameterSet { values, rng_seed: seed }, step })
}
