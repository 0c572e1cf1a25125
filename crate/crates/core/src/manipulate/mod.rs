//! Voice conversions (resampling, speed, pitch) and SNR-controlled noise.

mod noise;
mod resample;
mod vocoder;

pub use noise::{noise_id, NoiseBank, NoiseEntry, Taxonomy, NOISE_CLASSES};
pub use resample::{resample, resample_to};
pub use vocoder::{pitch_shift, time_stretch, VOCODER_HOP, VOCODER_WINDOW};

use serde::{Deserialize, Serialize};

use crate::audio::{rms_of, Waveform};
use crate::error::{Error, Result};

pub const RESAMPLE_OFFSETS: [i64; 5] = [-400, -200, 0, 200, 400];
pub const SPEED_RATES: [f64; 5] = [0.5, 0.8, 1.0, 1.2, 1.4];
pub const PITCH_STEPS: [i32; 5] = [-4, -2, 0, 2, 4];
pub const SNR_LEVELS: [f64; 5] = [25.0, 30.0, 35.0, 40.0, 45.0];

/// How a decibel figure relates to the signal and noise RMS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnrFormula {
    /// `20 log10(rms_s² / rms_n²)`, i.e. `40 log10(rms_s / rms_n)`.
    #[default]
    SquaredRatio,
    /// `20 log10(rms_s / rms_n)`.
    Standard,
}

impl SnrFormula {
    fn divisor(&self) -> f64 {
        match self {
            SnrFormula::SquaredRatio => 40.0,
            SnrFormula::Standard => 20.0,
        }
    }
}

/// SNR of `signal` against `noise` under `formula`.
pub fn snr_db(signal: &[f32], noise: &[f32], formula: SnrFormula) -> f64 {
    formula.divisor() * (rms_of(signal) / rms_of(noise)).log10()
}

fn fit_noise(noise: &[f32], len: usize) -> Vec<f32> {
    noise.iter().copied().cycle().take(len).collect()
}

/// Gain applied to the fitted noise so the mix hits `target_snr_db`.
pub fn noise_gain(signal: &Waveform, noise: &Waveform, target_snr_db: f64, formula: SnrFormula) -> Result<f64> {
    check_mix(signal, noise)?;
    let rs = rms_of(signal.samples());
    let rn = rms_of(&fit_noise(noise.samples(), signal.len()));
    if rs == 0.0 || rn == 0.0 {
        return Err(Error::arg("cannot mix at a target SNR when signal or noise is silent"));
    }
    Ok(rs / rn * 10f64.powf(-target_snr_db / formula.divisor()))
}

fn check_mix(signal: &Waveform, noise: &Waveform) -> Result<()> {
    if signal.sample_rate() != noise.sample_rate() {
        return Err(Error::arg(format!(
            "noise rate {} Hz differs from signal rate {} Hz",
            noise.sample_rate(),
            signal.sample_rate()
        )));
    }
    signal.require_non_empty("mix_noise")?;
    noise.require_non_empty("mix_noise")
}

/// Tiles or truncates `noise` to the signal length, scales it to reach
/// `target_snr_db` and adds it. The result is not clipped.
pub fn mix_noise(signal: &Waveform, noise: &Waveform, target_snr_db: f64, formula: SnrFormula) -> Result<Waveform> {
    if !target_snr_db.is_finite() {
        return Err(Error::arg("target SNR must be finite"));
    }
    let c = noise_gain(signal, noise, target_snr_db, formula)?;
    let fitted = fit_noise(noise.samples(), signal.len());
    let mixed: Vec<f32> = signal
        .samples()
        .iter()
        .zip(&fitted)
        .map(|(&s, &n)| (s as f64 + c * n as f64) as f32)
        .collect();
    if mixed.iter().any(|v| v.abs() > 1.0) {
        log::debug!("noise mix at {target_snr_db} dB leaves [-1, 1]");
    }
    Waveform::new(mixed, signal.sample_rate())
}

/// One parametrized manipulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Manipulation {
    Resample { offset_hz: i64 },
    Speed { rate: f64 },
    Pitch { n_steps: i32 },
    AddNoise { noise_id: String, snr_db: f64 },
}

impl Manipulation {
    /// Parameters that leave the input untouched.
    pub fn is_identity(&self) -> bool {
        match self {
            Manipulation::Resample { offset_hz } => *offset_hz == 0,
            Manipulation::Speed { rate } => *rate == 1.0,
            Manipulation::Pitch { n_steps } => *n_steps == 0,
            Manipulation::AddNoise { .. } => false,
        }
    }

    /// Report columns: manipulation name and magnitude.
    pub fn label(&self) -> (String, String) {
        match self {
            Manipulation::Resample { offset_hz } => ("resample".into(), offset_hz.to_string()),
            Manipulation::Speed { rate } => ("speed".into(), rate.to_string()),
            Manipulation::Pitch { n_steps } => ("pitch".into(), n_steps.to_string()),
            Manipulation::AddNoise { noise_id, snr_db } => (format!("noise:{noise_id}"), snr_db.to_string()),
        }
    }

    pub fn apply(&self, w: &Waveform, bank: &NoiseBank, formula: SnrFormula) -> Result<Waveform> {
        match self {
            Manipulation::Resample { offset_hz } => resample(w, *offset_hz),
            Manipulation::Speed { rate } => time_stretch(w, *rate),
            Manipulation::Pitch { n_steps } => pitch_shift(w, *n_steps),
            Manipulation::AddNoise { noise_id, snr_db } => {
                let noise = bank.get(noise_id).ok_or_else(|| Error::arg(format!("unknown noise `{noise_id}`")))?;
                let noise = resample_to(noise, w.sample_rate())?;
                mix_noise(w, &noise, *snr_db, formula)
            }
        }
    }

    /// The conversion grid followed by every noise at every SNR level.
    pub fn sweep_grid(noise_ids: &[&str]) -> Vec<Manipulation> {
        let mut grid: Vec<Manipulation> = RESAMPLE_OFFSETS.iter().map(|&o| Manipulation::Resample { offset_hz: o }).collect();
        grid.extend(SPEED_RATES.iter().map(|&r| Manipulation::Speed { rate: r }));
        grid.extend(PITCH_STEPS.iter().map(|&n| Manipulation::Pitch { n_steps: n }));
        for id in noise_ids {
            grid.extend(SNR_LEVELS.iter().map(|&s| Manipulation::AddNoise { noise_id: id.to_string(), snr_db: s }));
        }
        grid
    }
}

impl std::fmt::Display for Manipulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Manipulation::Resample { offset_hz } => write!(f, "resample:{offset_hz}"),
            Manipulation::Speed { rate } => write!(f, "speed:{rate}"),
            Manipulation::Pitch { n_steps } => write!(f, "pitch:{n_steps}"),
            Manipulation::AddNoise { noise_id, snr_db } => write!(f, "noise:{noise_id}@{snr_db}"),
        }
    }
}

impl std::str::FromStr for Manipulation {
    type Err = Error;

    /// `resample:<hz>`, `speed:<rate>`, `pitch:<steps>` or `noise:<id>@<db>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::arg(format!("cannot parse manipulation `{s}`"));
        let (kind, value) = s.split_once(':').ok_or_else(bad)?;
        Ok(match kind {
            "resample" => Manipulation::Resample { offset_hz: value.parse().map_err(|_| bad())? },
            "speed" => Manipulation::Speed { rate: value.parse().map_err(|_| bad())? },
            "pitch" => Manipulation::Pitch { n_steps: value.parse().map_err(|_| bad())? },
            "noise" => {
                let (id, db) = value.split_once('@').ok_or_else(bad)?;
                Manipulation::AddNoise { noise_id: id.to_string(), snr_db: db.parse().map_err(|_| bad())? }
            }
            _ => return Err(bad()),
        })
    }
}
