//! Waveform handling: SPL normalisation, synthetic corpora, level-grid datasets
//! and segmentation into context-extended windows.
//!
//! Sound pressure level is defined on the L2 norm of the whole signal,
//! `l = 20 log10(||x||_2 / p0)` with `p0 = 20 µPa`, not on its RMS. A signal
//! normalised to `l` therefore has per-sample amplitudes that shrink with its
//! length. Segment levels are referred back to the length of the utterance they
//! were cut from (see [`segment_level`]).

mod resample;
mod wav;

pub use resample::{resample, SINC_ZERO_CROSSINGS};
pub use wav::{read_wav, write_wav, WavCalibration};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::ops::Range;
use thiserror::Error;

use crate::digest::Hasher;

/// Reference sound pressure, 20 µPa.
pub const P_REF: f64 = 20e-6;

/// Default sampling rate of the laboratory.
pub const DEFAULT_SAMPLE_RATE: u32 = 20_000;

/// Corner frequency of the synthetic speech-shaped spectrum.
pub const SPEECH_SHAPE_CORNER_HZ: f64 = 500.0;

#[derive(Debug, Error, PartialEq)]
pub enum SignalError {
    #[error("input is silent (zero L2 norm)")]
    SilentInput,
    #[error("signal of {len} samples is shorter than one window of {window}")]
    InputTooShort { len: usize, window: usize },
    #[error("invalid waveform: {0}")]
    InvalidWaveform(String),
    #[error("invalid level grid: {0}")]
    InvalidGrid(String),
    #[error("invalid level {0} dB")]
    InvalidLevel(f64),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("unsupported WAV file: {0}")]
    UnsupportedWav(String),
    #[error("wav i/o: {0}")]
    WavIo(String),
}

/// A sampled pressure signal in Pa.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, SignalError> {
        if sample_rate == 0 {
            return Err(SignalError::InvalidWaveform("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(SignalError::InvalidWaveform("waveform must have at least one sample".into()));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(SignalError::InvalidWaveform(format!("non-finite sample at index {i}")));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn l2_norm(&self) -> f64 {
        l2(&self.samples)
    }

    pub fn scaled(&self, k: f64) -> Waveform {
        Waveform { samples: self.samples.iter().map(|v| v * k).collect(), sample_rate: self.sample_rate }
    }

    /// Copy of `range`, zero-extended where it leaves the signal.
    pub fn padded_slice(&self, start: isize, len: usize) -> Waveform {
        let n = self.samples.len() as isize;
        let samples = (start..start + len as isize)
            .map(|i| if i >= 0 && i < n { self.samples[i as usize] } else { 0.0 })
            .collect();
        Waveform { samples, sample_rate: self.sample_rate }
    }

    /// Content digest over the exact `f64` sample bits and the rate.
    pub fn digest(&self) -> String {
        Hasher::new().str("waveform").u64(self.sample_rate as u64).f64s(&self.samples).finish()
    }
}

pub(crate) fn l2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// An ordered set of presentation levels in dB SPL.
///
/// Multi-level grids must be uniformly spaced. A single-level grid is allowed
/// and reports a step of zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridRepr", into = "GridRepr")]
pub struct LevelGrid {
    levels: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct GridRepr {
    levels: Vec<f64>,
}

impl TryFrom<GridRepr> for LevelGrid {
    type Error = SignalError;
    fn try_from(r: GridRepr) -> Result<Self, SignalError> {
        LevelGrid::new(r.levels)
    }
}

impl From<LevelGrid> for GridRepr {
    fn from(g: LevelGrid) -> Self {
        GridRepr { levels: g.levels }
    }
}

impl LevelGrid {
    pub fn new(levels: Vec<f64>) -> Result<Self, SignalError> {
        if levels.is_empty() {
            return Err(SignalError::InvalidGrid("grid needs at least one level".into()));
        }
        if levels.iter().any(|l| !l.is_finite()) {
            return Err(SignalError::InvalidGrid("levels must be finite".into()));
        }
        if levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SignalError::InvalidGrid("levels must be strictly increasing".into()));
        }
        if levels.len() > 2 {
            let step = levels[1] - levels[0];
            if levels.windows(2).any(|w| ((w[1] - w[0]) - step).abs() > 1e-9 * step.max(1.0)) {
                return Err(SignalError::InvalidGrid("levels must be uniformly spaced".into()));
            }
        }
        Ok(Self { levels })
    }

    /// `min, min + step, …, max`.
    pub fn uniform(min: f64, max: f64, step: f64) -> Result<Self, SignalError> {
        if !(step > 0.0) || max < min {
            return Err(SignalError::InvalidGrid(format!("bad range {min}..{max} step {step}")));
        }
        let n = ((max - min) / step).round() as usize;
        Self::new((0..=n).map(|i| min + step * i as f64).collect())
    }

    /// 40 to 120 dB SPL in 10 dB steps.
    pub fn standard() -> Self {
        Self::uniform(40.0, 120.0, 10.0).expect("static grid")
    }

    pub fn single(level: f64) -> Result<Self, SignalError> {
        Self::new(vec![level])
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.levels[0]
    }

    pub fn max(&self) -> f64 {
        *self.levels.last().expect("non-empty grid")
    }

    pub fn step(&self) -> f64 {
        if self.levels.len() < 2 {
            0.0
        } else {
            self.levels[1] - self.levels[0]
        }
    }
}

/// Window length and context extension, all in samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub window_len: usize,
    pub left_context: usize,
    pub right_context: usize,
}

impl WindowSpec {
    pub fn new(window_len: usize, left_context: usize, right_context: usize) -> Result<Self, SignalError> {
        if window_len == 0 {
            return Err(SignalError::InvalidWaveform("window length must be at least 1".into()));
        }
        Ok(Self { window_len, left_context, right_context })
    }

    /// 2048-sample windows with 256 samples of context on both sides.
    pub fn standard() -> Self {
        Self { window_len: 2048, left_context: 256, right_context: 256 }
    }

    pub fn segment_len(&self) -> usize {
        self.left_context + self.window_len + self.right_context
    }

    /// Loss-bearing range inside an emitted segment.
    pub fn core_range(&self) -> Range<usize> {
        self.left_context..self.left_context + self.window_len
    }
}

/// One context-extended window.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub waveform: Waveform,
    /// Core window position inside `waveform`.
    pub core_in_segment: Range<usize>,
    /// Core window position inside the source signal.
    pub core_in_source: Range<usize>,
}

impl Segment {
    pub fn core(&self) -> &[f64] {
        &self.waveform.samples()[self.core_in_segment.clone()]
    }
}

/// Scales `x` so that `||y||_2 = p0 · 10^(l/20)`.
pub fn normalize_to_spl(x: &Waveform, level_db: f64) -> Result<Waveform, SignalError> {
    if !level_db.is_finite() {
        return Err(SignalError::InvalidLevel(level_db));
    }
    let norm = x.l2_norm();
    if norm == 0.0 {
        return Err(SignalError::SilentInput);
    }
    let target = spl_to_norm(level_db);
    if norm == target {
        return Ok(x.clone());
    }
    Ok(x.scaled(target / norm))
}

/// `20 log10(||x||_2 / p0)`.
pub fn measure_spl(x: &Waveform) -> Result<f64, SignalError> {
    norm_to_spl(x.l2_norm())
}

pub fn spl_to_norm(level_db: f64) -> f64 {
    P_REF * 10f64.powf(level_db / 20.0)
}

pub fn norm_to_spl(norm: f64) -> Result<f64, SignalError> {
    if norm == 0.0 {
        return Err(SignalError::SilentInput);
    }
    Ok(20.0 * (norm / P_REF).log10())
}

/// Level of a core window referred to the length of its source utterance.
///
/// The window's mean power is extrapolated over `source_len` samples, so a
/// window cut from a stationary signal normalised to `l` reports `l`, while a
/// quiet or loud stretch reports a correspondingly lower or higher level.
pub fn segment_level(core: &[f64], source_len: usize) -> Result<f64, SignalError> {
    if core.is_empty() {
        return Err(SignalError::SilentInput);
    }
    let norm = l2(core) * (source_len as f64 / core.len() as f64).sqrt();
    norm_to_spl(norm)
}

/// Gaussian noise with a flat spectrum below 500 Hz and an octave-band level
/// falling 6 dB per octave above it (power density ∝ f^-3), scaled to unit RMS.
pub fn synth_speech_shaped_noise(duration_s: f64, seed: u64, sample_rate: u32) -> Result<Waveform, SignalError> {
    if !(duration_s > 0.0) || sample_rate == 0 {
        return Err(SignalError::InvalidWaveform(format!("bad duration {duration_s} s")));
    }
    let n = ((duration_s * sample_rate as f64).round() as usize).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spectrum: Vec<Complex<f64>> =
        (0..n).map(|_| Complex::new(rng.sample::<f64, _>(StandardNormal), 0.0)).collect();
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(n).process(&mut spectrum);
    let df = sample_rate as f64 / n as f64;
    for (k, bin) in spectrum.iter_mut().enumerate() {
        let f = (k.min(n - k)) as f64 * df;
        *bin *= speech_shape_amplitude(f);
    }
    planner.plan_fft_inverse(n).process(&mut spectrum);
    let mut samples: Vec<f64> = spectrum.iter().map(|c| c.re).collect();
    let rms = (samples.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if rms > 0.0 {
        samples.iter_mut().for_each(|v| *v /= rms);
    }
    Waveform::new(samples, sample_rate)
}

/// Amplitude response of the speech-shaping filter.
pub fn speech_shape_amplitude(freq_hz: f64) -> f64 {
    if freq_hz <= SPEECH_SHAPE_CORNER_HZ {
        1.0
    } else {
        (SPEECH_SHAPE_CORNER_HZ / freq_hz).powf(1.5)
    }
}

/// Pure tone `sin(2π f t)` with unit amplitude.
pub fn pure_tone(freq_hz: f64, duration_s: f64, sample_rate: u32) -> Result<Waveform, SignalError> {
    if !(duration_s > 0.0) {
        return Err(SignalError::InvalidWaveform(format!("bad duration {duration_s} s")));
    }
    let n = ((duration_s * sample_rate as f64).round() as usize).max(1);
    let w = 2.0 * std::f64::consts::PI * freq_hz / sample_rate as f64;
    Waveform::new((0..n).map(|i| (w * i as f64).sin()).collect(), sample_rate)
}

/// Assigns every signal a level drawn uniformly from `grid` and normalises it.
pub fn build_level_dataset(
    corpus: &[Waveform],
    grid: &LevelGrid,
    seed: u64,
) -> Result<Vec<(Waveform, f64)>, SignalError> {
    if corpus.is_empty() {
        return Err(SignalError::EmptyCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    corpus
        .iter()
        .map(|x| {
            let level = *grid.levels().choose(&mut rng).expect("non-empty grid");
            Ok((normalize_to_spl(x, level)?, level))
        })
        .collect()
}

/// Splits `x` into non-overlapping windows, each extended with context.
///
/// Context is taken from the signal where available and zero-padded beyond
/// its ends. Trailing samples that do not fill a whole window are dropped.
pub fn window_with_context(x: &Waveform, spec: &WindowSpec) -> Result<Vec<Segment>, SignalError> {
    if spec.window_len == 0 {
        return Err(SignalError::InvalidWaveform("window length must be at least 1".into()));
    }
    if x.len() < spec.window_len {
        return Err(SignalError::InputTooShort { len: x.len(), window: spec.window_len });
    }
    let count = x.len() / spec.window_len;
    Ok((0..count)
        .map(|i| {
            let start = i * spec.window_len;
            Segment {
                waveform: x.padded_slice(start as isize - spec.left_context as isize, spec.segment_len()),
                core_in_segment: spec.core_range(),
                core_in_source: start..start + spec.window_len,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn noise(seed: u64) -> Waveform {
        synth_speech_shaped_noise(0.1, seed, DEFAULT_SAMPLE_RATE).unwrap()
    }

    #[test]
    fn waveform_rejects_bad_input() {
        assert!(Waveform::new(vec![], 100).is_err());
        assert!(Waveform::new(vec![1.0], 0).is_err());
        assert!(Waveform::new(vec![f64::NAN], 100).is_err());
    }

    #[test]
    fn normalize_94_db() {
        let y = normalize_to_spl(&noise(1), 94.0).unwrap();
        let expected = 20e-6 * 10f64.powf(94.0 / 20.0);
        assert_relative_eq!(y.l2_norm(), expected, max_relative = 1e-12);
        assert_relative_eq!(expected, 1.0024, epsilon = 1e-4);
    }

    #[test]
    fn normalize_identity_and_scale_invariance() {
        let exact = Waveform::new(vec![spl_to_norm(20.0)], 100).unwrap();
        assert_eq!(normalize_to_spl(&exact, 20.0).unwrap(), exact);

        let base = noise(3);
        let a = normalize_to_spl(&base, 55.0).unwrap();
        let b = normalize_to_spl(&base.scaled(7.0), 55.0).unwrap();
        for (u, v) in a.samples().iter().zip(b.samples()) {
            assert_relative_eq!(u, v, max_relative = 1e-14);
        }
    }

    #[test]
    fn silent_input_is_rejected() {
        let z = Waveform::new(vec![0.0; 10], 100).unwrap();
        assert_eq!(normalize_to_spl(&z, 60.0), Err(SignalError::SilentInput));
        assert_eq!(measure_spl(&z), Err(SignalError::SilentInput));
    }

    #[test]
    fn measure_reference_points() {
        let at_ref = Waveform::new(vec![P_REF], 100).unwrap();
        assert_relative_eq!(measure_spl(&at_ref).unwrap(), 0.0, epsilon = 1e-12);
        let ten = Waveform::new(vec![6.0 * P_REF, 8.0 * P_REF], 100).unwrap();
        assert_relative_eq!(measure_spl(&ten).unwrap(), 20.0, epsilon = 1e-12);
        let y = normalize_to_spl(&noise(4), 60.0).unwrap();
        assert!((measure_spl(&y).unwrap() - 60.0).abs() < 1e-9);
    }

    #[test]
    fn noise_is_seeded() {
        assert_eq!(noise(9), noise(9));
        assert_ne!(noise(9), noise(10));
    }

    /// Octave-band powers measured with an independent DFT band sum.
    #[test]
    fn noise_octave_tilt() {
        let x = synth_speech_shaped_noise(10.0, 5, DEFAULT_SAMPLE_RATE).unwrap();
        let n = x.len();
        let mut buf: Vec<Complex<f64>> = x.samples().iter().map(|&v| Complex::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let df = DEFAULT_SAMPLE_RATE as f64 / n as f64;
        let band = |fc: f64| -> f64 {
            let (lo, hi) = (fc / 2f64.sqrt(), fc * 2f64.sqrt());
            buf[..n / 2]
                .iter()
                .enumerate()
                .filter(|(k, _)| (*k as f64 * df) >= lo && (*k as f64 * df) < hi)
                .map(|(_, c)| c.norm_sqr())
                .sum()
        };
        let ratio_db = 10.0 * (band(1000.0) / band(2000.0)).log10();
        assert!((ratio_db - 6.0).abs() <= 1.0, "ratio {ratio_db}");
    }

    #[test]
    fn level_dataset_single_level() {
        let corpus: Vec<_> = (0..3).map(noise).collect();
        let grid = LevelGrid::single(60.0).unwrap();
        for (y, l) in build_level_dataset(&corpus, &grid, 1).unwrap() {
            assert_eq!(l, 60.0);
            assert!((measure_spl(&y).unwrap() - 60.0).abs() < 1e-9);
        }
    }

    #[test]
    fn level_dataset_is_uniform_and_seeded() {
        let corpus: Vec<_> = (0..900).map(|i| Waveform::new(vec![1.0 + i as f64], 100).unwrap()).collect();
        let grid = LevelGrid::standard();
        let a = build_level_dataset(&corpus, &grid, 77).unwrap();
        let b = build_level_dataset(&corpus, &grid, 77).unwrap();
        assert_eq!(a, b);
        // multinomial: n=900, p=1/9 -> mean 100, sigma = sqrt(900 * 1/9 * 8/9)
        let sigma = (900.0f64 / 9.0 * 8.0 / 9.0).sqrt();
        let mut chi2 = 0.0;
        for &l in grid.levels() {
            let count = a.iter().filter(|(_, lv)| *lv == l).count() as f64;
            assert!((count - 100.0).abs() <= 3.0 * sigma, "level {l}: {count}");
            chi2 += (count - 100.0).powi(2) / 100.0;
        }
        // 8 dof, p = 0.001 critical value
        assert!(chi2 < 26.12, "chi2 {chi2}");
        assert_eq!(build_level_dataset(&[], &grid, 1), Err(SignalError::EmptyCorpus));
    }

    #[test]
    fn grid_validation() {
        assert!(LevelGrid::new(vec![]).is_err());
        assert!(LevelGrid::new(vec![50.0, 40.0]).is_err());
        assert!(LevelGrid::new(vec![40.0, 50.0, 70.0]).is_err());
        let g = LevelGrid::standard();
        assert_eq!(g.len(), 9);
        assert_eq!(g.step(), 10.0);
        assert_eq!((g.min(), g.max()), (40.0, 120.0));
    }

    #[test]
    fn windowing_examples() {
        let x = Waveform::new((1..=4096).map(|v| v as f64).collect(), 100).unwrap();
        let segs = window_with_context(&x, &WindowSpec::new(2048, 0, 0).unwrap()).unwrap();
        assert_eq!(segs.len(), 2);
        assert!(segs.iter().all(|s| s.waveform.len() == 2048));

        let x = Waveform::new(vec![1.0; 2048], 100).unwrap();
        let segs = window_with_context(&x, &WindowSpec::standard()).unwrap();
        assert_eq!(segs.len(), 1);
        let s = segs[0].waveform.samples();
        assert_eq!(s.len(), 2560);
        assert!(s[..256].iter().all(|&v| v == 0.0));
        assert!(s[2304..].iter().all(|&v| v == 0.0));
        assert!(s[256..2304].iter().all(|&v| v == 1.0));

        let x = Waveform::new(vec![1.0; 2049], 100).unwrap();
        assert_eq!(window_with_context(&x, &WindowSpec::new(2048, 0, 0).unwrap()).unwrap().len(), 1);

        let x = Waveform::new(vec![1.0; 100], 100).unwrap();
        assert_eq!(
            window_with_context(&x, &WindowSpec::standard()),
            Err(SignalError::InputTooShort { len: 100, window: 2048 })
        );
    }

    #[test]
    fn segment_level_matches_utterance_level_for_flat_signal() {
        let x = normalize_to_spl(&Waveform::new(vec![1.0; 8192], 100).unwrap(), 65.0).unwrap();
        let segs = window_with_context(&x, &WindowSpec::new(2048, 16, 16).unwrap()).unwrap();
        for s in segs {
            assert!((segment_level(s.core(), x.len()).unwrap() - 65.0).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn spl_round_trip(values in prop::collection::vec(-10.0f64..10.0, 1..64), level in -20.0f64..140.0) {
            prop_assume!(values.iter().any(|v| v.abs() > 1e-6));
            let x = Waveform::new(values, 1000).unwrap();
            let y = normalize_to_spl(&x, level).unwrap();
            prop_assert!((measure_spl(&y).unwrap() - level).abs() < 1e-9);
        }

        #[test]
        fn windows_reassemble_prefix(len in 1usize..400, window in 1usize..64, left in 0usize..20, right in 0usize..20) {
            prop_assume!(len >= window);
            let x = Waveform::new((0..len).map(|i| i as f64 + 0.5).collect(), 100).unwrap();
            let segs = window_with_context(&x, &WindowSpec::new(window, left, right).unwrap()).unwrap();
            let joined: Vec<f64> = segs.iter().flat_map(|s| s.core().to_vec()).collect();
            prop_assert_eq!(&joined[..], &x.samples()[..joined.len()]);
            prop_assert_eq!(joined.len(), (len / window) * window);
        }
    }
}
