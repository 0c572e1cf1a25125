//! Kaiser-windowed sinc rate conversion.

use std::f64::consts::PI;

use crate::audio::Waveform;
use crate::error::{Error, Result};

const KAISER_BETA: f64 = 8.0;
/// Zero crossings of the sinc kernel on each side of the output point.
const ZERO_CROSSINGS: f64 = 32.0;

/// Modified Bessel function of the first kind, order zero (power series).
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

const TABLE_SIZE: usize = 1 << 14;

/// Kaiser window sampled on `|r| in [0, 1]`.
fn kaiser_table() -> Vec<f64> {
    let i0_beta = bessel_i0(KAISER_BETA);
    (0..=TABLE_SIZE)
        .map(|i| {
            let r = i as f64 / TABLE_SIZE as f64;
            bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / i0_beta
        })
        .collect()
}

fn lookup(table: &[f64], r: f64) -> f64 {
    if r >= 1.0 {
        return table[TABLE_SIZE];
    }
    let pos = r * TABLE_SIZE as f64;
    let i = pos as usize;
    let frac = pos - i as f64;
    table[i] + (table[i + 1] - table[i]) * frac
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Converts `samples` from `from` Hz to `to` Hz. The output has
/// `round(len * to / from)` samples; output sample `m` sits at input time
/// `m * from / to`. When downsampling the kernel cutoff drops to `to / from`
/// and its support widens accordingly.
pub(crate) fn resample_samples(samples: &[f32], from: f64, to: f64) -> Vec<f32> {
    let ratio = to / from;
    let out_len = (samples.len() as f64 * ratio).round() as usize;
    let cutoff = ratio.min(1.0);
    let half_width = ZERO_CROSSINGS / cutoff;
    let table = kaiser_table();
    let n = samples.len() as isize;
    (0..out_len)
        .map(|m| {
            let t = m as f64 / ratio;
            let lo = ((t - half_width).ceil() as isize).max(0);
            let hi = ((t + half_width).floor() as isize).min(n - 1);
            let mut acc = 0.0;
            for i in lo..=hi {
                let d = t - i as f64;
                let win = lookup(&table, (d / half_width).abs());
                acc += samples[i as usize] as f64 * cutoff * sinc(cutoff * d) * win;
            }
            acc as f32
        })
        .collect()
}

/// Rate conversion to `sample_rate + offset_hz`. Offset 0 returns the input.
pub fn resample(w: &Waveform, offset_hz: i64) -> Result<Waveform> {
    let target = w.sample_rate() as i64 + offset_hz;
    if target <= 0 || target > u32::MAX as i64 {
        return Err(Error::arg(format!("target rate {target} Hz is not positive")));
    }
    resample_to(w, target as u32)
}

/// Rate conversion to an absolute target rate.
pub fn resample_to(w: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(Error::arg("target rate must be positive"));
    }
    if target_rate == w.sample_rate() {
        return Ok(w.clone());
    }
    Waveform::new(
        resample_samples(w.samples(), w.sample_rate() as f64, target_rate as f64),
        target_rate,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manipulate::test_support::{dominant_frequency, tone};

    #[test]
    fn bessel_reference_values() {
        assert_eq!(bessel_i0(0.0), 1.0);
        assert!((bessel_i0(1.0) - 1.2660658777520082).abs() < 1e-15);
        assert!((bessel_i0(8.0) - 427.56411572180474).abs() < 1e-9);
    }

    #[test]
    fn zero_offset_is_identity() {
        let w = tone(440.0, 16000, 3000);
        assert_eq!(resample(&w, 0).unwrap(), w);
    }

    #[test]
    fn tone_content_preserved() {
        let w = tone(440.0, 16000, 32000);
        for offset in [-400, -200, 200, 400] {
            let r = resample(&w, offset).unwrap();
            assert_eq!(r.sample_rate() as i64, 16000 + offset);
            let f = dominant_frequency(&r);
            assert!((f - 440.0).abs() <= 5.0, "offset {offset}: {f}");
        }
    }

    #[test]
    fn length_scales_with_rate() {
        let w = tone(300.0, 16000, 16001);
        for offset in [-400i64, -200, 200, 400, 8000, -8000] {
            let r = resample(&w, offset).unwrap();
            let expected = 16001.0 * (16000 + offset) as f64 / 16000.0;
            assert!((r.len() as f64 - expected).abs() <= 1.0);
        }
    }

    #[test]
    fn non_positive_target_rejected() {
        let w = tone(300.0, 16000, 100);
        assert!(matches!(resample(&w, -16000), Err(Error::Argument(_))));
        assert!(matches!(resample(&w, -20000), Err(Error::Argument(_))));
    }

    #[test]
    fn upsample_interpolates_band_limited_signal() {
        let w = tone(200.0, 8000, 4000);
        let r = resample_to(&w, 16000).unwrap();
        // interior samples match the analytic tone at the new rate
        for m in 200..7800 {
            let t = m as f64 / 16000.0;
            let expected = 0.5 * (2.0 * PI * 200.0 * t).sin();
            assert!((r.samples()[m] as f64 - expected).abs() < 2e-3, "sample {m}");
        }
    }
}
