//! Evaluation battery: signal-to-error ratios, log-MAE curves, excitation
//! patterns and report export.
//!
//! SER values are capped at [`SER_CAP_DB`] for exact matches. A channel whose
//! target is silent has no SER; it is stored as `NaN` in matrices, written as
//! an empty CSV cell and as `null` in JSON.

mod report;

pub use report::{export_report, read_matrix_csv, Report, ReportSummary};

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audmodel::{AuditoryModel, InnerRepresentation, ModelError};
use crate::matrix::Matrix;
use crate::signals::{normalize_to_spl, pure_tone, LevelGrid, SignalError, Waveform};

/// Stand-in for an infinite SER.
pub const SER_CAP_DB: f64 = 300.0;
/// Stand-in for `log10(0)`.
pub const LOG_FLOOR: f64 = -300.0;
/// Onset discarded before measuring excitation patterns.
pub const EXCITATION_ONSET_S: f64 = 0.05;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("shape mismatch: target {target:?}, estimate {estimate:?}")]
    ShapeMismatch { target: (usize, usize), estimate: (usize, usize) },
    #[error("test signal {0} also appears in the training corpus")]
    CorpusOverlap(usize),
    #[error("matrices have different axes")]
    AxisMismatch,
    #[error("tone at {freq} Hz is not below the Nyquist frequency {nyquist} Hz")]
    NyquistViolation { freq: f64, nyquist: f64 },
    #[error("invalid tone: {0}")]
    InvalidTone(String),
    #[error("reference and emulator disagree on {0}")]
    ModelMismatch(String),
    #[error("nothing to report: {0}")]
    EmptyReport(String),
    #[error("malformed CSV: {0}")]
    Csv(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// How per-signal results are combined at one level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Sum signal and error energies over signals, then take the ratio.
    #[default]
    Energy,
    /// Average the per-signal SER values in dB.
    DbMean,
}

fn ratio_db(signal: f64, error: f64) -> f64 {
    if signal == 0.0 {
        f64::NAN
    } else if error == 0.0 {
        SER_CAP_DB
    } else {
        (10.0 * (signal / error).log10()).min(SER_CAP_DB)
    }
}

fn energies(target: &Matrix, estimate: &Matrix) -> Result<Vec<(f64, f64)>, EvalError> {
    if target.shape() != estimate.shape() {
        return Err(EvalError::ShapeMismatch { target: target.shape(), estimate: estimate.shape() });
    }
    Ok(target
        .iter_rows()
        .zip(estimate.iter_rows())
        .map(|(t, e)| {
            let s = t.iter().map(|v| v * v).sum();
            let err = t.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum();
            (s, err)
        })
        .collect())
}

/// `20·log10(‖f_j‖₂ / ‖f_j − f̂_j‖₂)` per channel; `None` for a silent target channel.
pub fn ser(target: &InnerRepresentation, estimate: &InnerRepresentation) -> Result<Vec<Option<f64>>, EvalError> {
    Ok(energies(target.channels(), estimate.channels())?
        .into_iter()
        .map(|(s, e)| Some(ratio_db(s, e)).filter(|v| !v.is_nan()))
        .collect())
}

/// SER per channel and level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SerMatrix {
    /// `J × |L|` in dB; `NaN` marks a silent target.
    pub values: Matrix,
    pub cfs: Vec<f64>,
    pub levels: Vec<f64>,
}

impl SerMatrix {
    /// Mean over present cells of one level column.
    pub fn level_mean(&self, l: usize) -> f64 {
        mean_present((0..self.values.rows()).map(|j| self.values.get(j, l)))
    }

    /// Smallest present cell.
    pub fn worst(&self) -> f64 {
        self.values.as_slice().iter().copied().filter(|v| !v.is_nan()).fold(f64::INFINITY, f64::min)
    }
}

fn mean_present(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.filter(|v| !v.is_nan()).fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Rejects test signals whose digest occurs in `training_digests`.
pub fn check_disjoint(test_corpus: &[Waveform], training_digests: &[String]) -> Result<(), EvalError> {
    let train: HashSet<&str> = training_digests.iter().map(String::as_str).collect();
    match test_corpus.iter().position(|x| train.contains(x.digest().as_str())) {
        Some(i) => Err(EvalError::CorpusOverlap(i)),
        None => Ok(()),
    }
}

fn check_models(model: &dyn AuditoryModel, emulator: &dyn AuditoryModel) -> Result<(), EvalError> {
    if model.cfs() != emulator.cfs() {
        return Err(EvalError::ModelMismatch("channel CFs".into()));
    }
    if model.sample_rate() != emulator.sample_rate() {
        return Err(EvalError::ModelMismatch("sample rate".into()));
    }
    Ok(())
}

/// Reference and emulator outputs for every `(level, signal)` pair, in level-major order.
fn paired_outputs<R: Send>(
    model: &dyn AuditoryModel,
    emulator: &dyn AuditoryModel,
    test_corpus: &[Waveform],
    grid: &LevelGrid,
    reduce: impl Fn(&Matrix, &Matrix) -> Result<R, EvalError> + Sync,
) -> Result<Vec<R>, EvalError> {
    if test_corpus.is_empty() {
        return Err(SignalError::EmptyCorpus.into());
    }
    check_models(model, emulator)?;
    let jobs: Vec<(f64, &Waveform)> =
        grid.levels().iter().flat_map(|&l| test_corpus.iter().map(move |x| (l, x))).collect();
    jobs.par_iter()
        .map(|&(l, x)| {
            let xl = normalize_to_spl(x, l)?;
            let t = model.forward(&xl)?;
            let e = emulator.forward(&xl)?;
            reduce(t.channels(), e.channels())
        })
        .collect()
}

/// SER for every channel and level over a held-out corpus.
pub fn ser_matrix(
    model: &dyn AuditoryModel,
    emulator: &dyn AuditoryModel,
    test_corpus: &[Waveform],
    grid: &LevelGrid,
    training_digests: &[String],
    pooling: Pooling,
) -> Result<SerMatrix, EvalError> {
    check_disjoint(test_corpus, training_digests)?;
    let per = paired_outputs(model, emulator, test_corpus, grid, |t, e| energies(t, e))?;
    let (j, n) = (model.num_channels(), test_corpus.len());
    let mut values = Matrix::zeros(j, grid.len());
    for l in 0..grid.len() {
        let block = &per[l * n..(l + 1) * n];
        for ch in 0..j {
            let v = match pooling {
                Pooling::Energy => {
                    let (s, e) = block.iter().fold((0.0, 0.0), |(s, e), cell| (s + cell[ch].0, e + cell[ch].1));
                    ratio_db(s, e)
                }
                Pooling::DbMean => mean_present(block.iter().map(|cell| ratio_db(cell[ch].0, cell[ch].1))),
            };
            values.set(ch, l, v);
        }
    }
    Ok(SerMatrix { values, cfs: model.cfs().to_vec(), levels: grid.levels().to_vec() })
}

/// Cellwise `a − b` and the mean over cells present in both.
pub fn delta_ser(a: &SerMatrix, b: &SerMatrix) -> Result<(Matrix, f64), EvalError> {
    if a.cfs != b.cfs || a.levels != b.levels || a.values.shape() != b.values.shape() {
        return Err(EvalError::AxisMismatch);
    }
    let d = Matrix::from_vec(
        a.values.rows(),
        a.values.cols(),
        a.values.as_slice().iter().zip(b.values.as_slice()).map(|(x, y)| x - y).collect(),
    );
    let mean = mean_present(d.as_slice().iter().copied());
    Ok((d, mean))
}

/// Per-level MAE and its global mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogMaeCurve {
    pub levels: Vec<f64>,
    pub mae: Vec<f64>,
    /// `log10(mae)`, floored at [`LOG_FLOOR`].
    pub log_mae: Vec<f64>,
    /// Global error: arithmetic mean of the per-level MAE values.
    pub ge: f64,
}

impl LogMaeCurve {
    pub fn from_mae(levels: Vec<f64>, mae: Vec<f64>) -> Self {
        let log_mae = mae.iter().map(|&m| if m > 0.0 { m.log10().max(LOG_FLOOR) } else { LOG_FLOOR }).collect();
        let ge = mae.iter().sum::<f64>() / mae.len() as f64;
        Self { levels, mae, log_mae, ge }
    }
}

/// MAE pooled over all signals, channels and samples at each level.
pub fn log_mae_curve(
    model: &dyn AuditoryModel,
    emulator: &dyn AuditoryModel,
    test_corpus: &[Waveform],
    grid: &LevelGrid,
    training_digests: &[String],
) -> Result<LogMaeCurve, EvalError> {
    check_disjoint(test_corpus, training_digests)?;
    let per = paired_outputs(model, emulator, test_corpus, grid, |t, e| {
        if t.shape() != e.shape() {
            return Err(EvalError::ShapeMismatch { target: t.shape(), estimate: e.shape() });
        }
        let abs: f64 = t.as_slice().iter().zip(e.as_slice()).map(|(a, b)| (a - b).abs()).sum();
        Ok((abs, t.as_slice().len()))
    })?;
    let n = test_corpus.len();
    let mae = (0..grid.len())
        .map(|l| {
            let (s, c) = per[l * n..(l + 1) * n].iter().fold((0.0, 0usize), |(s, c), &(a, k)| (s + a, c + k));
            s / c as f64
        })
        .collect();
    Ok(LogMaeCurve::from_mae(grid.levels().to_vec(), mae))
}

/// Per-channel RMS response to a pure tone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcitationPattern {
    pub tone_freq: f64,
    pub tone_level: f64,
    pub cfs: Vec<f64>,
    pub rms_per_cf: Vec<f64>,
}

impl ExcitationPattern {
    /// Channel with the largest RMS; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        self.rms_per_cf.iter().enumerate().fold(0, |best, (i, &v)| if v > self.rms_per_cf[best] { i } else { best })
    }
}

/// Runs a tone normalised to `tone_level` through `model` and measures each
/// channel's RMS after the first [`EXCITATION_ONSET_S`] seconds.
pub fn excitation_pattern(
    model: &dyn AuditoryModel,
    tone_freq: f64,
    tone_level: f64,
    duration_s: f64,
) -> Result<ExcitationPattern, EvalError> {
    let rate = model.sample_rate();
    let nyquist = rate as f64 / 2.0;
    if !(tone_freq > 0.0) {
        return Err(EvalError::InvalidTone(format!("frequency {tone_freq} Hz")));
    }
    if tone_freq >= nyquist {
        return Err(EvalError::NyquistViolation { freq: tone_freq, nyquist });
    }
    if !tone_level.is_finite() {
        return Err(SignalError::InvalidLevel(tone_level).into());
    }
    let onset = (EXCITATION_ONSET_S * rate as f64).round() as usize;
    let tone = pure_tone(tone_freq, duration_s, rate)?;
    if tone.len() <= onset {
        return Err(EvalError::InvalidTone(format!("{duration_s} s leaves no steady state after the onset")));
    }
    let y = model.forward(&normalize_to_spl(&tone, tone_level)?)?;
    Ok(ExcitationPattern { tone_freq, tone_level, cfs: y.cfs().to_vec(), rms_per_cf: steady_rms(y.channels(), onset) })
}

fn steady_rms(m: &Matrix, onset: usize) -> Vec<f64> {
    m.iter_rows()
        .map(|r| {
            let s = &r[onset..];
            (s.iter().map(|v| v * v).sum::<f64>() / s.len() as f64).sqrt()
        })
        .collect()
}
