//! Versioned JSON configuration, one file per command.
//!
//! Relative paths inside a config are resolved against the directory that
//! holds the config file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use fmae_core::audmodel::{
    audiogram_to_profile, standard_audiogram, CorpusAdapter, IdentityModel, ModelRef, SurrogateModel,
    SurrogateModelConfig, DEFAULT_OHC_FRACTION,
};
use fmae_core::eval::Pooling;
use fmae_core::net::{build_connear_spec_with, build_waveunet_spec_with, ConnearConfig, NetworkSpec, WaveUNetConfig};
use fmae_core::signals::{LevelGrid, WavCalibration, WindowSpec, DEFAULT_SAMPLE_RATE};
use fmae_core::train::Objective;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// A parsed config plus the bytes and location it came from.
pub struct Loaded<T> {
    pub config: T,
    pub bytes: Vec<u8>,
    pub base: PathBuf,
}

impl<T> Loaded<T> {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }
}

#[derive(Deserialize)]
struct Versioned {
    schema_version: Option<u32>,
}

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<Loaded<T>, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::bad_config(path.display(), e))?;
    let head: Versioned = serde_json::from_slice(&bytes).map_err(|e| CliError::bad_config(path.display(), e))?;
    match head.schema_version {
        Some(SCHEMA_VERSION) => {}
        Some(v) => {
            return Err(CliError::bad_config(
                path.display(),
                format!("schema_version {v} is not supported (expected {SCHEMA_VERSION})"),
            ))
        }
        None => return Err(CliError::bad_config(path.display(), "missing field `schema_version`")),
    }
    let config = serde_json::from_slice(&bytes).map_err(|e| CliError::bad_config(path.display(), e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Loaded { config, bytes, base })
}

fn default_rate() -> u32 {
    DEFAULT_SAMPLE_RATE
}

fn default_profile() -> String {
    "N0".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    Surrogate {
        /// Audiogram template name.
        #[serde(default = "default_profile")]
        profile: String,
        #[serde(default)]
        ohc_fraction: Option<f64>,
        #[serde(default)]
        params: SurrogateModelConfig,
    },
    Identity {
        channels: usize,
        #[serde(default = "default_rate")]
        sample_rate: u32,
    },
    /// Precomputed targets behind a corpus manifest.
    Corpus { manifest: PathBuf },
}

impl ModelConfig {
    pub fn build(&self, resolve: impl Fn(&Path) -> PathBuf) -> Result<ModelRef, CliError> {
        Ok(match self {
            ModelConfig::Surrogate { profile, ohc_fraction, params } => {
                params.validate()?;
                let a = standard_audiogram(profile)?;
                let p = audiogram_to_profile(&a, &params.cfs(), ohc_fraction.unwrap_or(DEFAULT_OHC_FRACTION))?;
                ModelRef::Surrogate(SurrogateModel::new(params.clone(), p)?)
            }
            ModelConfig::Identity { channels, sample_rate } => {
                ModelRef::Identity(IdentityModel::new(*channels, *sample_rate))
            }
            ModelConfig::Corpus { manifest } => ModelRef::Corpus(CorpusAdapter::load(&resolve(manifest))?),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridConfig {
    Levels { levels: Vec<f64> },
    Uniform { min: f64, max: f64, step: f64 },
}

impl GridConfig {
    pub fn build(&self) -> Result<LevelGrid, CliError> {
        Ok(match self {
            GridConfig::Levels { levels } => LevelGrid::new(levels.clone())?,
            GridConfig::Uniform { min, max, step } => LevelGrid::uniform(*min, *max, *step)?,
        })
    }
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig::Uniform { min: 40.0, max: 120.0, step: 10.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum GenConfig {
    Synth {
        schema_version: u32,
        count: usize,
        duration_s: f64,
        #[serde(default = "default_rate")]
        sample_rate: u32,
        #[serde(default)]
        seed: Option<u64>,
    },
    Ingest {
        schema_version: u32,
        files: Vec<PathBuf>,
        #[serde(default = "default_rate")]
        sample_rate: u32,
        #[serde(default)]
        calibration: WavCalibration,
        #[serde(default)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightsConfig {
    pub schema_version: u32,
    pub model: ModelConfig,
    pub corpus: PathBuf,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub per_level: Option<usize>,
    #[serde(default)]
    pub floor_per_sample: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum NetworkConfig {
    Waveunet {
        channels: Option<usize>,
        #[serde(flatten)]
        params: WaveUNetConfig,
    },
    Connear {
        channels: Option<usize>,
        #[serde(flatten)]
        params: ConnearConfig,
    },
}

impl NetworkConfig {
    /// Builds the spec; `channels` defaults to the reference model's channel count.
    pub fn build(&self, model_channels: usize) -> Result<NetworkSpec, CliError> {
        let spec = match self {
            NetworkConfig::Waveunet { channels, params } => {
                build_waveunet_spec_with(channels.unwrap_or(model_channels), params)
            }
            NetworkConfig::Connear { channels, params } => build_connear_spec_with(channels.unwrap_or(model_channels), params),
        };
        spec.validate().map_err(|e| CliError::bad_config("network", e))?;
        Ok(spec)
    }
}

fn default_one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingSection {
    pub objective: Objective,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub window: WindowSpec,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default = "default_one")]
    pub output_scale: f64,
    #[serde(default)]
    pub checkpoint_every: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub schema_version: u32,
    pub model: ModelConfig,
    pub corpus: PathBuf,
    pub network: NetworkConfig,
    pub training: TrainingSection,
    /// Weight table produced by `weights`; required for the fmae objective.
    #[serde(default)]
    pub weights: Option<PathBuf>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfig {
    pub schema_version: u32,
    pub model: ModelConfig,
    pub test_corpus: PathBuf,
    /// Run directories produced by `train`, by report name.
    pub runs: BTreeMap<String, PathBuf>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub pooling: Pooling,
    /// `[a, b]` pairs reported as `a − b`.
    #[serde(default)]
    pub deltas: Vec<(String, String)>,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_tone_duration() -> f64 {
    1.024
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExciteConfig {
    pub schema_version: u32,
    pub model: ModelConfig,
    #[serde(default)]
    pub runs: BTreeMap<String, PathBuf>,
    pub freqs: Vec<f64>,
    pub levels: Vec<f64>,
    #[serde(default = "default_tone_duration")]
    pub duration_s: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnergyMapConfig {
    pub schema_version: u32,
    pub model: ModelConfig,
    pub corpus: PathBuf,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub seed: Option<u64>,
}
