//! Mono WAV ingestion and export.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use serde::{Deserialize, Serialize};

use super::{resample, SignalError, Waveform};

/// Mapping between digital full scale and pressure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WavCalibration {
    /// Pressure in Pa represented by a full-scale sample (1.0 in float WAVs).
    pub full_scale_pa: f64,
}

impl Default for WavCalibration {
    fn default() -> Self {
        Self { full_scale_pa: 1.0 }
    }
}

fn io_err(e: hound::Error) -> SignalError {
    SignalError::WavIo(e.to_string())
}

/// Reads a mono 16-bit integer or 32-bit float WAV and resamples it to `rate`.
pub fn read_wav(path: &Path, calibration: WavCalibration, rate: u32) -> Result<Waveform, SignalError> {
    let reader = WavReader::open(path).map_err(io_err)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(SignalError::UnsupportedWav(format!(
            "{}: {} channels, only mono input is accepted",
            path.display(),
            spec.channels
        )));
    }
    let scale = calibration.full_scale_pa;
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0 * scale))
            .collect::<Result<_, _>>()
            .map_err(io_err)?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64 * scale))
            .collect::<Result<_, _>>()
            .map_err(io_err)?,
        (fmt, bits) => {
            return Err(SignalError::UnsupportedWav(format!(
                "{}: {bits}-bit {fmt:?} samples, expected 16-bit PCM or 32-bit float",
                path.display()
            )))
        }
    };
    let x = Waveform::new(samples, spec.sample_rate)?;
    resample(&x, rate)
}

/// Writes a 32-bit float mono WAV.
pub fn write_wav(path: &Path, x: &Waveform, calibration: WavCalibration) -> Result<(), SignalError> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: x.sample_rate(),
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer = WavWriter::create(path, spec).map_err(io_err)?;
    for &v in x.samples() {
        writer.write_sample((v / calibration.full_scale_pa) as f32).map_err(io_err)?;
    }
    writer.finalize().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_round_trip_is_f32_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let x = Waveform::new(vec![0.25, -0.5, 0.125, 0.0], 20_000).unwrap();
        write_wav(&path, &x, WavCalibration::default()).unwrap();
        assert_eq!(read_wav(&path, WavCalibration::default(), 20_000).unwrap(), x);
    }

    #[test]
    fn int16_is_scaled_by_calibration() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.wav");
        let spec = WavSpec { channels: 1, sample_rate: 20_000, bits_per_sample: 16, sample_format: SampleFormat::Int };
        let mut w = WavWriter::create(&path, spec).unwrap();
        w.write_sample(16384i16).unwrap();
        w.write_sample(-32768i16).unwrap();
        w.finalize().unwrap();
        let x = read_wav(&path, WavCalibration { full_scale_pa: 2.0 }, 20_000).unwrap();
        assert_eq!(x.samples(), &[1.0, -2.0]);
    }

    #[test]
    fn stereo_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.wav");
        let spec = WavSpec { channels: 2, sample_rate: 20_000, bits_per_sample: 16, sample_format: SampleFormat::Int };
        let mut w = WavWriter::create(&path, spec).unwrap();
        w.write_sample(1i16).unwrap();
        w.write_sample(1i16).unwrap();
        w.finalize().unwrap();
        let err = read_wav(&path, WavCalibration::default(), 20_000).unwrap_err();
        assert!(matches!(err, SignalError::UnsupportedWav(ref m) if m.contains("mono")), "{err}");
    }
}
