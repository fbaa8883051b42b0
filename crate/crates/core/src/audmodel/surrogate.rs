//! Deterministic surrogate cochlear model.
//!
//! Per channel:
//! 1. 4th-order gammatone bandpass at the CF (cascade of four complex one-pole
//!    resonators, bandwidth `1.019 · ERB(cf)`), unit gain at the CF.
//! 2. Instantaneous broken-stick compression. Below the knee amplitude
//!    `p0 · 10^(knee_level/20)` the response is linear with a gain reduction of
//!    `(1 - c_ohc) · 20 dB`; above it the magnitude grows with exponent
//!    `c_ohc · e_normal + (1 - c_ohc)`. The impaired curve is capped by the
//!    normal-hearing curve, so an impaired channel never exceeds a healthy one.
//! 3. Half-wave rectification scaled by `c_ihc`, then a first-order lowpass at
//!    `ihc_cutoff`.
//! 4. Multiplication by `output_scale`.
//!
//! No group-delay compensation is applied.

use num_complex::Complex;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::{log_spaced_cfs, AuditoryModel, HearingProfile, InnerRepresentation, ModelError};
use crate::digest::Hasher;
use crate::matrix::Matrix;
use crate::signals::{Waveform, DEFAULT_SAMPLE_RATE, P_REF};

/// Largest below-knee gain reduction, reached at `c_ohc = 0`.
pub const MAX_OHC_GAIN_LOSS_DB: f64 = 60.0 / 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateModelConfig {
    pub channels: usize,
    pub cf_min: f64,
    pub cf_max: f64,
    pub compression_exponent_normal: f64,
    pub knee_level: f64,
    pub ihc_cutoff: f64,
    pub output_scale: f64,
    pub sample_rate: u32,
}

impl Default for SurrogateModelConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            cf_min: 125.0,
            cf_max: 8000.0,
            compression_exponent_normal: 0.25,
            knee_level: 30.0,
            ihc_cutoff: 3000.0,
            output_scale: 5e4,
            sample_rate: DEFAULT_SAMPLE_RATE,
        }
    }
}

impl SurrogateModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.channels < 2 {
            return bad("surrogate needs at least two channels");
        }
        if !(self.cf_min > 0.0 && self.cf_min < self.cf_max) {
            return bad("cf_min must be positive and below cf_max");
        }
        if self.cf_max >= self.sample_rate as f64 / 2.0 {
            return bad("cf_max must lie below the Nyquist frequency");
        }
        if !(self.compression_exponent_normal > 0.0 && self.compression_exponent_normal <= 1.0) {
            return bad("compression exponent must lie in (0, 1]");
        }
        if !(self.ihc_cutoff > 0.0) || !self.knee_level.is_finite() || !(self.output_scale > 0.0) {
            return bad("ihc_cutoff and output_scale must be positive, knee_level finite");
        }
        Ok(())
    }

    pub fn cfs(&self) -> Vec<f64> {
        log_spaced_cfs(self.channels, self.cf_min, self.cf_max)
    }
}

/// Glasberg & Moore equivalent rectangular bandwidth.
pub fn erb(cf_hz: f64) -> f64 {
    24.7 * (4.37 * cf_hz / 1000.0 + 1.0)
}

#[derive(Debug, Clone)]
struct Gammatone {
    pole: Complex<f64>,
    gain: f64,
}

impl Gammatone {
    fn new(cf: f64, rate: f64) -> Self {
        let omega = 2.0 * PI * cf / rate;
        let r = (-2.0 * PI * 1.019 * erb(cf) / rate).exp();
        let pole = Complex::from_polar(r, omega);
        // Real part of the analytic output for cos(omega n) input has amplitude
        // |H(omega) + conj(H(-omega))| / 2; normalise it to one.
        let h = |w: f64| (Complex::new(1.0, 0.0) - pole * Complex::from_polar(1.0, -w)).inv().powi(4);
        let response = (h(omega) + h(-omega).conj()).norm() / 2.0;
        Self { pole, gain: 1.0 / response }
    }

    fn run(&self, x: &[f64], out: &mut [f64]) {
        let mut state = [Complex::new(0.0, 0.0); 4];
        for (o, &v) in out.iter_mut().zip(x) {
            let mut z = Complex::new(v, 0.0);
            for s in state.iter_mut() {
                *s = z + self.pole * *s;
                z = *s;
            }
            *o = self.gain * z.re;
        }
    }
}

#[derive(Debug, Clone)]
struct Channel {
    filter: Gammatone,
    linear_gain: f64,
    exponent: f64,
    c_ihc: f64,
}

#[derive(Debug, Clone)]
pub struct SurrogateModel {
    config: SurrogateModelConfig,
    profile: HearingProfile,
    cfs: Vec<f64>,
    channels: Vec<Channel>,
    knee: f64,
    lowpass: f64,
    digest: String,
}

impl SurrogateModel {
    pub fn new(config: SurrogateModelConfig, profile: HearingProfile) -> Result<Self, ModelError> {
        config.validate()?;
        profile.validate()?;
        let cfs = config.cfs();
        if profile.cfs.len() != cfs.len() || profile.cfs.iter().zip(&cfs).any(|(a, b)| (a - b).abs() > 1e-9 * b) {
            return Err(ModelError::ProfileMismatch);
        }
        let rate = config.sample_rate as f64;
        let e_n = config.compression_exponent_normal;
        let channels = cfs
            .iter()
            .enumerate()
            .map(|(j, &cf)| {
                let c = profile.c_ohc[j];
                Channel {
                    filter: Gammatone::new(cf, rate),
                    linear_gain: 10f64.powf(-(1.0 - c) * MAX_OHC_GAIN_LOSS_DB / 20.0),
                    exponent: c * e_n + (1.0 - c),
                    c_ihc: profile.c_ihc[j],
                }
            })
            .collect();
        let digest = Hasher::new()
            .str("surrogate-v1")
            .str(&serde_json::to_string(&config).expect("config serialises"))
            .f64s(&profile.c_ohc)
            .f64s(&profile.c_ihc)
            .finish();
        Ok(Self {
            knee: P_REF * 10f64.powf(config.knee_level / 20.0),
            lowpass: 1.0 - (-2.0 * PI * config.ihc_cutoff / rate).exp(),
            config,
            profile,
            cfs,
            channels,
            digest,
        })
    }

    /// Normal-hearing surrogate with the given configuration.
    pub fn normal(config: SurrogateModelConfig) -> Result<Self, ModelError> {
        let profile = HearingProfile::normal(&config.cfs());
        Self::new(config, profile)
    }

    pub fn config(&self) -> &SurrogateModelConfig {
        &self.config
    }

    pub fn profile(&self) -> &HearingProfile {
        &self.profile
    }

    fn compress(&self, ch: &Channel, u: f64) -> f64 {
        let a = u.abs();
        let (impaired, normal) = if a <= self.knee {
            (ch.linear_gain * a, a)
        } else {
            let ratio = a / self.knee;
            (
                ch.linear_gain * self.knee * ratio.powf(ch.exponent),
                self.knee * ratio.powf(self.config.compression_exponent_normal),
            )
        };
        impaired.min(normal).copysign(u)
    }
}

/// Runs the surrogate on `x`.
pub fn surrogate_forward(model: &SurrogateModel, x: &Waveform) -> Result<InnerRepresentation, ModelError> {
    if x.sample_rate() != model.config.sample_rate {
        return Err(ModelError::RateMismatch { expected: model.config.sample_rate, got: x.sample_rate() });
    }
    let t = x.len();
    let mut out = Matrix::zeros(model.channels.len(), t);
    let mut bm = vec![0.0; t];
    let scale = model.config.output_scale;
    for (j, ch) in model.channels.iter().enumerate() {
        ch.filter.run(x.samples(), &mut bm);
        let row = out.row_mut(j);
        let mut state = 0.0;
        for (o, &u) in row.iter_mut().zip(&bm) {
            let drive = ch.c_ihc * model.compress(ch, u).max(0.0);
            state += model.lowpass * (drive - state);
            *o = scale * state;
        }
    }
    Ok(InnerRepresentation::new(out, model.cfs.clone())?)
}

impl AuditoryModel for SurrogateModel {
    fn forward(&self, x: &Waveform) -> Result<InnerRepresentation, ModelError> {
        surrogate_forward(self, x)
    }

    fn cfs(&self) -> &[f64] {
        &self.cfs
    }

    fn sample_rate(&self) -> u32 {
        self.config.sample_rate
    }

    fn digest(&self) -> String {
        self.digest.clone()
    }
}
