//! Ground-truth auditory models `f: X -> I`.

pub mod audiogram;
pub mod corpus;
pub mod surrogate;

pub use audiogram::{
    audiogram_to_profile, audiogram_to_profile_with, standard_audiogram, Audiogram, AudiogramTemplate, HearingProfile,
    ProfileMapping, DEFAULT_OHC_FRACTION,
};
pub use corpus::{CorpusAdapter, CorpusEntry, CorpusManifest};
pub use surrogate::{surrogate_forward, SurrogateModel, SurrogateModelConfig};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::Hasher;
use crate::matrix::Matrix;
use crate::signals::{normalize_to_spl, LevelGrid, SignalError, Waveform, DEFAULT_SAMPLE_RATE};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("sample rate mismatch: model runs at {expected} Hz, input is {got} Hz")]
    RateMismatch { expected: u32, got: u32 },
    #[error("hearing profile CFs do not match the model CFs")]
    ProfileMismatch,
    #[error("input not found in precomputed corpus (key {0})")]
    NotInCorpus(String),
    #[error("unknown audiogram template {0:?}")]
    UnknownTemplate(String),
    #[error("audiogram has {freqs} frequencies but {losses} losses")]
    MismatchedLengths { freqs: usize, losses: usize },
    #[error("invalid audiogram: {0}")]
    InvalidAudiogram(String),
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid inner representation: {0}")]
    InvalidRepresentation(String),
    #[error("corpus format error: {0}")]
    CorpusFormat(String),
    #[error("model digest mismatch: expected {expected}, found {found}")]
    DigestMismatch { expected: String, found: String },
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// A `J × T` matrix of channel outputs with its characteristic frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerRepresentation {
    channels: Matrix,
    cfs: Vec<f64>,
}

impl InnerRepresentation {
    pub fn new(channels: Matrix, cfs: Vec<f64>) -> Result<Self, ModelError> {
        if cfs.is_empty() || channels.rows() != cfs.len() {
            return Err(ModelError::InvalidRepresentation(format!(
                "{} rows for {} CFs",
                channels.rows(),
                cfs.len()
            )));
        }
        if cfs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ModelError::InvalidRepresentation("CFs must be strictly increasing".into()));
        }
        if !channels.is_finite() {
            return Err(ModelError::InvalidRepresentation("non-finite channel value".into()));
        }
        Ok(Self { channels, cfs })
    }

    pub fn channels(&self) -> &Matrix {
        &self.channels
    }

    pub fn into_channels(self) -> Matrix {
        self.channels
    }

    pub fn cfs(&self) -> &[f64] {
        &self.cfs
    }

    pub fn num_channels(&self) -> usize {
        self.cfs.len()
    }

    pub fn len(&self) -> usize {
        self.channels.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.cols() == 0
    }

    /// Time slice `start..end` of every channel.
    pub fn slice(&self, start: usize, end: usize) -> InnerRepresentation {
        Self { channels: self.channels.slice_cols(start, end), cfs: self.cfs.clone() }
    }

    pub fn with_channels(&self, channels: Matrix) -> Result<Self, ModelError> {
        Self::new(channels, self.cfs.clone())
    }
}

/// An auditory model: a deterministic map from waveforms to inner representations.
pub trait AuditoryModel: Send + Sync {
    fn forward(&self, x: &Waveform) -> Result<InnerRepresentation, ModelError>;
    fn cfs(&self) -> &[f64];
    fn sample_rate(&self) -> u32;
    /// Identifies the model and all of its parameters.
    fn digest(&self) -> String;

    fn num_channels(&self) -> usize {
        self.cfs().len()
    }
}

/// `f_j(x) = x` for every channel. Useful as a linear reference.
#[derive(Debug, Clone)]
pub struct IdentityModel {
    cfs: Vec<f64>,
    sample_rate: u32,
}

impl IdentityModel {
    pub fn new(channels: usize, sample_rate: u32) -> Self {
        let cfs = if channels == 1 { vec![1000.0] } else { log_spaced_cfs(channels, 125.0, 8000.0) };
        Self { cfs, sample_rate }
    }
}

impl Default for IdentityModel {
    fn default() -> Self {
        Self::new(1, DEFAULT_SAMPLE_RATE)
    }
}

impl AuditoryModel for IdentityModel {
    fn forward(&self, x: &Waveform) -> Result<InnerRepresentation, ModelError> {
        if x.sample_rate() != self.sample_rate {
            return Err(ModelError::RateMismatch { expected: self.sample_rate, got: x.sample_rate() });
        }
        let data = x.samples().repeat(self.cfs.len());
        InnerRepresentation::new(Matrix::from_vec(self.cfs.len(), x.len(), data), self.cfs.clone())
    }

    fn cfs(&self) -> &[f64] {
        &self.cfs
    }

    fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    fn digest(&self) -> String {
        Hasher::new().str("identity").u64(self.cfs.len() as u64).u64(self.sample_rate as u64).finish()
    }
}

/// Closed set of reference models selectable from configuration.
pub enum ModelRef {
    Surrogate(SurrogateModel),
    Corpus(CorpusAdapter),
    Identity(IdentityModel),
}

impl ModelRef {
    fn inner(&self) -> &dyn AuditoryModel {
        match self {
            ModelRef::Surrogate(m) => m,
            ModelRef::Corpus(m) => m,
            ModelRef::Identity(m) => m,
        }
    }
}

impl AuditoryModel for ModelRef {
    fn forward(&self, x: &Waveform) -> Result<InnerRepresentation, ModelError> {
        self.inner().forward(x)
    }
    fn cfs(&self) -> &[f64] {
        self.inner().cfs()
    }
    fn sample_rate(&self) -> u32 {
        self.inner().sample_rate()
    }
    fn digest(&self) -> String {
        self.inner().digest()
    }
}

/// Dispatches to the model's forward pass.
pub fn model_forward(model: &dyn AuditoryModel, x: &Waveform) -> Result<InnerRepresentation, ModelError> {
    model.forward(x)
}

/// `count` CFs spaced logarithmically from `min` to `max`, both included.
pub fn log_spaced_cfs(count: usize, min: f64, max: f64) -> Vec<f64> {
    if count == 1 {
        return vec![min];
    }
    let ratio = (max / min).ln();
    (0..count).map(|i| min * (ratio * i as f64 / (count - 1) as f64).exp()).collect()
}

/// Mean per-channel energy `||f_j(x_l)||²` at every level, divided by the
/// smallest cell. Returns a `J × |L|` matrix whose minimum is exactly 1.
pub fn energy_distribution(
    model: &dyn AuditoryModel,
    corpus: &[Waveform],
    grid: &LevelGrid,
) -> Result<Matrix, ModelError> {
    if corpus.is_empty() {
        return Err(SignalError::EmptyCorpus.into());
    }
    let j = model.num_channels();
    let jobs: Vec<(usize, usize)> =
        (0..grid.len()).flat_map(|l| (0..corpus.len()).map(move |s| (l, s))).collect();
    let energies = jobs
        .par_iter()
        .map(|&(l, s)| -> Result<Vec<f64>, ModelError> {
            let x = normalize_to_spl(&corpus[s], grid.levels()[l])?;
            let y = model.forward(&x)?;
            Ok(y.channels().iter_rows().map(|r| r.iter().map(|v| v * v).sum()).collect())
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut cells = Matrix::zeros(j, grid.len());
    for (&(l, _), e) in jobs.iter().zip(&energies) {
        for (ch, v) in e.iter().enumerate() {
            cells.set(ch, l, cells.get(ch, l) + v);
        }
    }
    let n = corpus.len() as f64;
    let cells = cells.map(|v| v / n);
    let min = cells.min();
    if !(min > 0.0) {
        return Err(SignalError::SilentInput.into());
    }
    Ok(cells.map(|v| v / min))
}
