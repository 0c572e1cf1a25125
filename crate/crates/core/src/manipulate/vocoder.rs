//! Phase-vocoder time stretching and the pitch shift built on it.

use num_complex::Complex64;
use std::f64::consts::PI;

use super::resample::resample_samples;
use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::fft;

pub const VOCODER_WINDOW: usize = 2048;
pub const VOCODER_HOP: usize = 512;

/// Centered STFT: the signal is zero-padded by half a window on each side,
/// giving `1 + len / hop` frames.
fn centered_stft(x: &[f32], window: &[f64]) -> Vec<Vec<Complex64>> {
    let n = VOCODER_WINDOW;
    let pad = n / 2;
    let mut padded = vec![0.0f64; x.len() + 2 * pad];
    for (d, &s) in padded[pad..].iter_mut().zip(x) {
        *d = s as f64;
    }
    let frames = 1 + x.len() / VOCODER_HOP;
    (0..frames)
        .map(|f| {
            let start = f * VOCODER_HOP;
            let frame: Vec<f64> = padded[start..start + n].iter().zip(window).map(|(&s, &w)| s * w).collect();
            fft::rfft(&frame)
        })
        .collect()
}

/// Windowed overlap-add, normalized by the summed squared window, with the
/// centering pad removed and the result fixed to `length` samples.
fn centered_istft(frames: &[Vec<Complex64>], window: &[f64], length: usize) -> Vec<f32> {
    let n = VOCODER_WINDOW;
    let pad = n / 2;
    let total = (n + VOCODER_HOP * frames.len().saturating_sub(1)).max(pad + length);
    let mut y = vec![0.0f64; total];
    let mut wsum = vec![0.0f64; total];
    for (f, spec) in frames.iter().enumerate() {
        let start = f * VOCODER_HOP;
        let frame = fft::irfft(spec, n);
        for i in 0..n {
            y[start + i] += frame[i] * window[i];
            wsum[start + i] += window[i] * window[i];
        }
    }
    (pad..pad + length)
        .map(|i| {
            let v = if wsum[i] > 1e-10 { y[i] / wsum[i] } else { y[i] };
            v as f32
        })
        .collect()
}

fn wrap_phase(p: f64) -> f64 {
    p - 2.0 * PI * ((p + PI) / (2.0 * PI)).floor()
}

/// Stretches `x` in time by `1 / rate` without changing pitch. Magnitudes are
/// linearly interpolated between neighbouring analysis frames and phases are
/// accumulated from the measured per-bin phase advance.
pub(crate) fn stretch_samples(x: &[f32], rate: f64, length: usize) -> Vec<f32> {
    let n = VOCODER_WINDOW;
    let window = fft::hann(n);
    let mut spec = centered_stft(x, &window);
    let bins = n / 2 + 1;
    let analysis_frames = spec.len();
    spec.push(vec![Complex64::new(0.0, 0.0); bins]);
    spec.push(vec![Complex64::new(0.0, 0.0); bins]);
    let expected: Vec<f64> = (0..bins).map(|k| 2.0 * PI * VOCODER_HOP as f64 * k as f64 / n as f64).collect();
    let mut phase: Vec<f64> = spec[0].iter().map(|c| c.arg()).collect();
    let mut out = Vec::new();
    let mut t = 0.0f64;
    while t < analysis_frames as f64 {
        let i = t.floor() as usize;
        let alpha = t - i as f64;
        let (c0, c1) = (&spec[i], &spec[i + 1]);
        let frame: Vec<Complex64> = (0..bins)
            .map(|k| {
                let mag = (1.0 - alpha) * c0[k].norm() + alpha * c1[k].norm();
                Complex64::from_polar(mag, phase[k])
            })
            .collect();
        for k in 0..bins {
            let dphase = wrap_phase(c1[k].arg() - c0[k].arg() - expected[k]);
            phase[k] += expected[k] + dphase;
        }
        out.push(frame);
        t += rate;
    }
    centered_istft(&out, &window, length)
}

fn require_window(w: &Waveform) -> Result<()> {
    if w.len() < VOCODER_WINDOW {
        return Err(Error::arg(format!(
            "signal of {} samples is shorter than one {VOCODER_WINDOW}-sample vocoder window",
            w.len()
        )));
    }
    Ok(())
}

/// Speed change: output length is `round(len / rate)`. Rate 1.0 returns the
/// input.
pub fn time_stretch(w: &Waveform, rate: f64) -> Result<Waveform> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::arg(format!("stretch rate must be positive, got {rate}")));
    }
    require_window(w)?;
    if rate == 1.0 {
        return Ok(w.clone());
    }
    let length = (w.len() as f64 / rate).round() as usize;
    Waveform::new(stretch_samples(w.samples(), rate, length), w.sample_rate())
}

/// Shifts pitch by `n_steps` semitones keeping duration: stretch by
/// `2^(-n_steps/12)`, resample back to the original rate, then trim or
/// zero-pad to the original length.
pub fn pitch_shift(w: &Waveform, n_steps: i32) -> Result<Waveform> {
    require_window(w)?;
    if n_steps == 0 {
        return Ok(w.clone());
    }
    let rate = 2f64.powf(-n_steps as f64 / 12.0);
    let stretched = stretch_samples(w.samples(), rate, (w.len() as f64 / rate).round() as usize);
    let sr = w.sample_rate() as f64;
    let mut shifted = resample_samples(&stretched, sr / rate, sr);
    shifted.resize(w.len(), 0.0);
    Waveform::new(shifted, w.sample_rate())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manipulate::test_support::{dominant_frequency, tone};

    #[test]
    fn identity_parameters_are_exact() {
        let w = tone(440.0, 16000, 8000);
        assert_eq!(time_stretch(&w, 1.0).unwrap(), w);
        assert_eq!(pitch_shift(&w, 0).unwrap(), w);
    }

    #[test]
    fn stretch_lengths() {
        let w = tone(440.0, 16000, 32000);
        for rate in [0.5, 0.8, 1.2, 1.4, 2.0] {
            let s = time_stretch(&w, rate).unwrap();
            let expected = 32000.0 / rate;
            assert!((s.len() as f64 - expected).abs() <= VOCODER_HOP as f64, "rate {rate}");
        }
    }

    #[test]
    fn stretch_keeps_pitch() {
        let w = tone(440.0, 16000, 32000);
        let s = time_stretch(&w, 0.5).unwrap();
        assert!((dominant_frequency(&s) - 440.0).abs() <= 5.0);
    }

    #[test]
    fn octave_shifts() {
        let w = tone(440.0, 16000, 32000);
        let up = pitch_shift(&w, 12).unwrap();
        assert_eq!(up.len(), w.len());
        assert!((dominant_frequency(&up) - 880.0).abs() <= 10.0);
        let down = pitch_shift(&w, -12).unwrap();
        assert!((dominant_frequency(&down) - 220.0).abs() <= 5.0);
    }

    #[test]
    fn reconstruction_without_stretch() {
        let w = tone(523.0, 16000, 9000);
        let window = fft::hann(VOCODER_WINDOW);
        let back = centered_istft(&centered_stft(w.samples(), &window), &window, w.len());
        for (a, b) in w.samples().iter().zip(&back) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn short_and_bad_inputs() {
        let w = tone(440.0, 16000, 1000);
        assert!(matches!(time_stretch(&w, 0.8), Err(Error::Argument(_))));
        assert!(matches!(pitch_shift(&w, 2), Err(Error::Argument(_))));
        let long = tone(440.0, 16000, 4000);
        assert!(time_stretch(&long, 0.0).is_err());
        assert!(time_stretch(&long, -1.0).is_err());
    }

    #[test]
    fn deterministic() {
        let w = tone(310.0, 16000, 6000);
        assert_eq!(pitch_shift(&w, 3).unwrap(), pitch_shift(&w, 3).unwrap());
    }
}
