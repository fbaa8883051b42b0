//! Audiograms and their conversion into per-channel hair-cell parameters.
//!
//! Loss in dB HL is interpolated linearly in dB against log-frequency and held
//! constant beyond the outermost audiometric frequencies. A fraction of the
//! loss (2/3 by default) is attributed to the outer hair cells, the rest to the
//! inner hair cells. Each component maps onto a `[0, 1]` parameter as
//! `c = 10^(-loss_component / l_max_component)`, clamped, with
//! `l_max_ohc = 60 dB` and `l_max_ihc = 40 dB` by default.

use serde::{Deserialize, Serialize};
use std::str::FromStr;

use super::ModelError;

/// Audiometric frequencies of the standard templates.
pub const TEMPLATE_FREQS: [f64; 10] = [250.0, 375.0, 500.0, 750.0, 1000.0, 1500.0, 2000.0, 3000.0, 4000.0, 6000.0];

const N3: [f64; 10] = [35.0, 35.0, 35.0, 35.0, 40.0, 45.0, 50.0, 55.0, 60.0, 65.0];
const N5: [f64; 10] = [65.0, 67.5, 70.0, 72.5, 75.0, 80.0, 80.0, 80.0, 80.0, 80.0];
const S1: [f64; 10] = [10.0, 10.0, 10.0, 10.0, 10.0, 10.0, 15.0, 30.0, 55.0, 70.0];

/// Default share of the hearing loss attributed to the outer hair cells.
pub const DEFAULT_OHC_FRACTION: f64 = 2.0 / 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Audiogram {
    freqs: Vec<f64>,
    losses: Vec<f64>,
}

impl Audiogram {
    pub fn new(freqs: Vec<f64>, losses: Vec<f64>) -> Result<Self, ModelError> {
        if freqs.len() != losses.len() {
            return Err(ModelError::MismatchedLengths { freqs: freqs.len(), losses: losses.len() });
        }
        if freqs.is_empty() {
            return Err(ModelError::InvalidAudiogram("no audiometric frequencies".into()));
        }
        if freqs.iter().any(|f| !(*f > 0.0)) || freqs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ModelError::InvalidAudiogram("frequencies must be positive and strictly increasing".into()));
        }
        if losses.iter().any(|l| !(0.0..=120.0).contains(l)) {
            return Err(ModelError::InvalidAudiogram("losses must lie in [0, 120] dB HL".into()));
        }
        Ok(Self { freqs, losses })
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    /// Loss at `freq_hz`, linear in dB over log-frequency, clamped at the ends.
    pub fn loss_at(&self, freq_hz: f64) -> f64 {
        let f = &self.freqs;
        let n = f.len();
        if freq_hz <= f[0] {
            return self.losses[0];
        }
        if freq_hz >= f[n - 1] {
            return self.losses[n - 1];
        }
        let hi = f.partition_point(|&v| v < freq_hz);
        if f[hi] == freq_hz {
            return self.losses[hi];
        }
        let lo = hi - 1;
        let t = (freq_hz / f[lo]).ln() / (f[hi] / f[lo]).ln();
        self.losses[lo] + t * (self.losses[hi] - self.losses[lo])
    }

    pub fn with_loss(&self, index: usize, loss: f64) -> Result<Self, ModelError> {
        let mut losses = self.losses.clone();
        losses[index] = loss;
        Self::new(self.freqs.clone(), losses)
    }
}

/// Named audiogram templates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AudiogramTemplate {
    N0,
    N3,
    N5,
    S1,
    /// 20 dB at every audiometric frequency.
    Flat20,
    /// 5 dB up to 1 kHz, sloping to 20 dB at 8 kHz.
    Slope20_5,
}

impl FromStr for AudiogramTemplate {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, ModelError> {
        match s {
            "N0" => Ok(Self::N0),
            "N3" => Ok(Self::N3),
            "N5" => Ok(Self::N5),
            "S1" => Ok(Self::S1),
            "Flat20" => Ok(Self::Flat20),
            "Slope20_5" => Ok(Self::Slope20_5),
            other => Err(ModelError::UnknownTemplate(other.to_string())),
        }
    }
}

/// Looks a template up by name.
pub fn standard_audiogram(name: &str) -> Result<Audiogram, ModelError> {
    Ok(name.parse::<AudiogramTemplate>()?.audiogram())
}

impl AudiogramTemplate {
    pub fn audiogram(self) -> Audiogram {
        let table = |losses: [f64; 10]| Audiogram::new(TEMPLATE_FREQS.to_vec(), losses.to_vec()).expect("static table");
        match self {
            Self::N0 => table([0.0; 10]),
            Self::N3 => table(N3),
            Self::N5 => table(N5),
            Self::S1 => table(S1),
            Self::Flat20 => {
                let freqs = vec![125.0, 250.0, 500.0, 1000.0, 2000.0, 4000.0, 8000.0];
                let n = freqs.len();
                Audiogram::new(freqs, vec![20.0; n]).expect("static table")
            }
            Self::Slope20_5 => {
                let freqs = vec![125.0, 250.0, 500.0, 1000.0, 2000.0, 4000.0, 8000.0];
                // 15 dB spread over the three octaves above 1 kHz
                let losses = vec![5.0, 5.0, 5.0, 5.0, 10.0, 15.0, 20.0];
                Audiogram::new(freqs, losses).expect("static table")
            }
        }
    }
}

/// Per-channel hair-cell health, 1 = normal, 0 = complete dysfunction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HearingProfile {
    pub c_ohc: Vec<f64>,
    pub c_ihc: Vec<f64>,
    pub cfs: Vec<f64>,
}

impl HearingProfile {
    pub fn normal(cfs: &[f64]) -> Self {
        Self { c_ohc: vec![1.0; cfs.len()], c_ihc: vec![1.0; cfs.len()], cfs: cfs.to_vec() }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let j = self.cfs.len();
        if self.c_ohc.len() != j || self.c_ihc.len() != j {
            return Err(ModelError::InvalidConfig("profile vectors must match the CF count".into()));
        }
        if self.c_ohc.iter().chain(&self.c_ihc).any(|c| !(0.0..=1.0).contains(c)) {
            return Err(ModelError::InvalidConfig("hair-cell parameters must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// dB-to-parameter mapping constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileMapping {
    pub l_max_ohc: f64,
    pub l_max_ihc: f64,
}

impl Default for ProfileMapping {
    fn default() -> Self {
        Self { l_max_ohc: 60.0, l_max_ihc: 40.0 }
    }
}

pub fn audiogram_to_profile(a: &Audiogram, cfs: &[f64], ohc_fraction: f64) -> Result<HearingProfile, ModelError> {
    audiogram_to_profile_with(a, cfs, ohc_fraction, ProfileMapping::default())
}

pub fn audiogram_to_profile_with(
    a: &Audiogram,
    cfs: &[f64],
    ohc_fraction: f64,
    mapping: ProfileMapping,
) -> Result<HearingProfile, ModelError> {
    if a.freqs.len() != a.losses.len() {
        return Err(ModelError::MismatchedLengths { freqs: a.freqs.len(), losses: a.losses.len() });
    }
    if !(0.0..=1.0).contains(&ohc_fraction) {
        return Err(ModelError::InvalidConfig(format!("ohc fraction {ohc_fraction} outside [0, 1]")));
    }
    let to_param = |loss: f64, l_max: f64| 10f64.powf(-loss / l_max).clamp(0.0, 1.0);
    let (mut c_ohc, mut c_ihc) = (Vec::with_capacity(cfs.len()), Vec::with_capacity(cfs.len()));
    for &cf in cfs {
        let loss = a.loss_at(cf);
        c_ohc.push(to_param(ohc_fraction * loss, mapping.l_max_ohc));
        c_ihc.push(to_param((1.0 - ohc_fraction) * loss, mapping.l_max_ihc));
    }
    Ok(HearingProfile { c_ohc, c_ihc, cfs: cfs.to_vec() })
}
