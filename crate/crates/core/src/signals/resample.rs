//! Band-limited resampling by windowed-sinc interpolation.
//!
//! Kernel: `h(τ) = c · sinc(c·τ) · w(τ / H)` with `c = 0.95 · min(1, fs_out / fs_in)`
//! the cutoff relative to the input Nyquist frequency, `H = SINC_ZERO_CROSSINGS / c`
//! the half-width in input samples and `w` a Blackman window on `[-1, 1]`.

use std::f64::consts::PI;

use super::{SignalError, Waveform};

/// Zero crossings of the sinc kept on each side of the kernel centre.
pub const SINC_ZERO_CROSSINGS: f64 = 16.0;

const CUTOFF_FRACTION: f64 = 0.95;

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

fn blackman(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        return 0.0;
    }
    // u in [-1, 1] mapped onto the full window
    let phase = PI * (u + 1.0);
    0.42 - 0.5 * phase.cos() + 0.08 * (2.0 * phase).cos()
}

/// Resamples `x` to `rate`. Identity when the rates already agree.
pub fn resample(x: &Waveform, rate: u32) -> Result<Waveform, SignalError> {
    if rate == 0 {
        return Err(SignalError::InvalidWaveform("target rate must be positive".into()));
    }
    let src = x.sample_rate();
    if src == rate {
        return Ok(x.clone());
    }
    let ratio = rate as f64 / src as f64;
    let cutoff = CUTOFF_FRACTION * ratio.min(1.0);
    let half_width = SINC_ZERO_CROSSINGS / cutoff;
    let input = x.samples();
    let n_out = ((input.len() as f64) * ratio).floor().max(1.0) as usize;
    let out = (0..n_out)
        .map(|n| {
            let t = n as f64 / ratio;
            let lo = (t - half_width).ceil().max(0.0) as usize;
            let hi = ((t + half_width).floor() as usize).min(input.len() - 1);
            (lo..=hi)
                .map(|k| {
                    let tau = t - k as f64;
                    input[k] * cutoff * sinc(cutoff * tau) * blackman(tau / half_width)
                })
                .sum()
        })
        .collect();
    Waveform::new(out, rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, rate: u32, n: usize) -> Waveform {
        Waveform::new((0..n).map(|i| (2.0 * PI * freq * i as f64 / rate as f64).sin()).collect(), rate).unwrap()
    }

    #[test]
    fn same_rate_is_identity() {
        let x = tone(440.0, 20_000, 100);
        assert_eq!(resample(&x, 20_000).unwrap(), x);
    }

    #[test]
    fn downsampled_tone_keeps_shape() {
        let x = tone(1000.0, 48_000, 48_000);
        let y = resample(&x, 20_000).unwrap();
        assert_eq!(y.len(), 20_000);
        let reference = tone(1000.0, 20_000, 20_000);
        // interior samples, away from edge transients
        let err = y.samples()[200..19_800]
            .iter()
            .zip(&reference.samples()[200..19_800])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-3, "max error {err}");
    }

    #[test]
    fn components_above_new_nyquist_are_removed() {
        let x = tone(15_000.0, 48_000, 48_000);
        let y = resample(&x, 20_000).unwrap();
        let rms = (y.samples()[200..19_800].iter().map(|v| v * v).sum::<f64>() / 19_600.0).sqrt();
        assert!(rms < 1e-3, "residual rms {rms}");
    }
}
