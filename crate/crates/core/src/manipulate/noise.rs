//! Bank of background noises grouped as indoor or outdoor.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::resample::resample_to;
use crate::audio::{load_wav, rms_of, Waveform};
use crate::error::{Error, Result};
use crate::util::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Taxonomy {
    Indoor,
    Outdoor,
}

impl Taxonomy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Taxonomy::Indoor => "indoor",
            Taxonomy::Outdoor => "outdoor",
        }
    }
}

/// The twelve noise classes in sweep order.
pub const NOISE_CLASSES: [(Taxonomy, &str); 12] = [
    (Taxonomy::Indoor, "breathing"),
    (Taxonomy::Indoor, "footsteps"),
    (Taxonomy::Indoor, "laughing"),
    (Taxonomy::Indoor, "mouse-click"),
    (Taxonomy::Indoor, "keyboard-type"),
    (Taxonomy::Indoor, "clock-tick"),
    (Taxonomy::Outdoor, "engine"),
    (Taxonomy::Outdoor, "train"),
    (Taxonomy::Outdoor, "fireworks"),
    (Taxonomy::Outdoor, "rain"),
    (Taxonomy::Outdoor, "wind"),
    (Taxonomy::Outdoor, "thunderstorm"),
];

pub fn noise_id(taxonomy: Taxonomy, class: &str) -> String {
    format!("{}_{class}", taxonomy.as_str())
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseEntry {
    pub id: String,
    pub taxonomy: Taxonomy,
    pub class: String,
    pub wave: Waveform,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct NoiseBank {
    pub entries: Vec<NoiseEntry>,
}

impl NoiseBank {
    pub fn get(&self, id: &str) -> Option<&Waveform> {
        self.entries.iter().find(|e| e.id == id).map(|e| &e.wave)
    }

    pub fn ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.id.as_str()).collect()
    }

    /// Synthetic textures for all twelve classes, each normalized to RMS 0.1.
    pub fn synthetic(sample_rate: u32, seconds: f64, seed: u64) -> Result<Self> {
        if sample_rate == 0 || !(seconds > 0.0) {
            return Err(Error::arg("noise bank needs a positive rate and duration"));
        }
        let len = (seconds * sample_rate as f64).round() as usize;
        let entries = NOISE_CLASSES
            .iter()
            .enumerate()
            .map(|(i, &(taxonomy, class))| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x5000 + i as u64));
                let mut samples = texture(class, len, sample_rate as f64, &mut rng);
                let r = rms_of(&samples);
                if r > 0.0 {
                    let g = (0.1 / r) as f32;
                    samples.iter_mut().for_each(|s| *s *= g);
                }
                Ok(NoiseEntry {
                    id: noise_id(taxonomy, class),
                    taxonomy,
                    class: class.to_string(),
                    wave: Waveform::new(samples, sample_rate)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(NoiseBank { entries })
    }

    /// Loads every `<taxonomy>_<class>.wav` in `dir`, resampled to
    /// `working_rate`. Entries are sorted by id.
    pub fn load_dir(dir: &Path, working_rate: u32) -> Result<Self> {
        let mut entries = Vec::new();
        for item in std::fs::read_dir(dir)? {
            let path = item?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("wav") {
                continue;
            }
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let (tax, class) = stem
                .split_once('_')
                .ok_or_else(|| Error::arg(format!("noise file `{stem}.wav` is not named <taxonomy>_<class>.wav")))?;
            let taxonomy = match tax {
                "indoor" => Taxonomy::Indoor,
                "outdoor" => Taxonomy::Outdoor,
                other => return Err(Error::arg(format!("unknown noise taxonomy `{other}`"))),
            };
            let wave = resample_to(&load_wav(&path)?, working_rate)?;
            entries.push(NoiseEntry { id: stem.clone(), taxonomy, class: class.to_string(), wave });
        }
        entries.sort_by(|a, b| a.id.cmp(&b.id));
        if entries.is_empty() {
            return Err(Error::arg(format!("no noise recordings in {}", dir.display())));
        }
        Ok(NoiseBank { entries })
    }
}

fn white(rng: &mut ChaCha8Rng) -> f64 {
    rng.gen_range(-1.0..1.0)
}

/// One-pole low-pass with cutoff `fc` Hz.
fn lowpass(x: &mut [f64], fc: f64, sr: f64) {
    let a = (-2.0 * PI * fc / sr).exp();
    let mut y = 0.0;
    for v in x.iter_mut() {
        y = (1.0 - a) * *v + a * y;
        *v = y;
    }
}

fn highpass(x: &mut [f64], fc: f64, sr: f64) {
    let mut low = x.to_vec();
    lowpass(&mut low, fc, sr);
    for (v, l) in x.iter_mut().zip(low) {
        *v -= l;
    }
}

/// Adds a decaying burst at `start`: noise or a tone, exponential decay.
fn burst(x: &mut [f64], start: usize, amp: f64, decay_s: f64, freq: Option<f64>, sr: f64, rng: &mut ChaCha8Rng) {
    let n = ((decay_s * 6.0) * sr) as usize;
    for i in 0..n.min(x.len().saturating_sub(start)) {
        let t = i as f64 / sr;
        let env = amp * (-t / decay_s).exp();
        let carrier = match freq {
            Some(f) => (2.0 * PI * f * t).sin(),
            None => white(rng),
        };
        x[start + i] += env * carrier;
    }
}

fn events(x: &mut [f64], rate_hz: f64, sr: f64, rng: &mut ChaCha8Rng, mut add: impl FnMut(&mut [f64], usize, &mut ChaCha8Rng)) {
    // first onset always lands inside the clip, however short
    let mut t = rng.gen_range(0.0..(1.0 / rate_hz).min(x.len() as f64 / sr));
    while ((t * sr) as usize) < x.len() {
        add(x, (t * sr) as usize, rng);
        t += rng.gen_range(0.5..1.5) / rate_hz;
    }
}

fn texture(class: &str, len: usize, sr: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let mut x = vec![0.0f64; len];
    let time = |i: usize| i as f64 / sr;
    match class {
        "breathing" => {
            x.iter_mut().for_each(|v| *v = white(rng));
            lowpass(&mut x, 900.0, sr);
            highpass(&mut x, 150.0, sr);
            for (i, v) in x.iter_mut().enumerate() {
                *v *= (2.0 * PI * 0.3 * time(i)).sin().max(0.0).powi(2);
            }
        }
        "footsteps" => events(&mut x, 2.0, sr, rng, |x, s, r| {
            burst(x, s, 1.0, 0.02, Some(70.0), sr, r);
            burst(x, s, 0.3, 0.008, None, sr, r);
        }),
        "laughing" => {
            let f0 = 260.0;
            for (i, v) in x.iter_mut().enumerate() {
                let t = time(i);
                let syll = (2.0 * PI * 5.0 * t).sin().max(0.0);
                let voiced: f64 = (1..6).map(|h| (2.0 * PI * f0 * h as f64 * t).sin() / h as f64).sum();
                *v = syll * voiced;
            }
            for v in x.iter_mut() {
                *v += 0.05 * white(rng);
            }
        }
        "mouse-click" => events(&mut x, 1.5, sr, rng, |x, s, r| {
            burst(x, s, 1.0, 0.0015, None, sr, r);
            burst(x, s + (0.06 * sr) as usize, 0.7, 0.0015, None, sr, r);
        }),
        "keyboard-type" => events(&mut x, 8.0, sr, rng, |x, s, r| {
            let f = r.gen_range(1500.0..3500.0);
            burst(x, s, 0.8, 0.004, Some(f), sr, r);
            burst(x, s, 0.4, 0.003, None, sr, r);
        }),
        "clock-tick" => {
            let mut t = 0.1;
            while ((t * sr) as usize) < len {
                burst(&mut x, (t * sr) as usize, 1.0, 0.003, Some(4000.0), sr, rng);
                t += 1.0;
            }
            for v in x.iter_mut() {
                *v += 0.002 * white(rng);
            }
        }
        "engine" => {
            let f = rng.gen_range(28.0..36.0);
            for (i, v) in x.iter_mut().enumerate() {
                let t = time(i);
                *v = (1..8).map(|h| (2.0 * PI * f * h as f64 * t).sin() / h as f64).sum::<f64>();
            }
            let mut n: Vec<f64> = (0..len).map(|_| white(rng)).collect();
            lowpass(&mut n, 400.0, sr);
            x.iter_mut().zip(n).for_each(|(v, n)| *v += 2.0 * n);
        }
        "train" => {
            x.iter_mut().for_each(|v| *v = white(rng));
            lowpass(&mut x, 250.0, sr);
            let mut t = 0.05;
            while ((t * sr) as usize) < len {
                burst(&mut x, (t * sr) as usize, 0.3, 0.01, Some(180.0), sr, rng);
                t += 0.45;
            }
        }
        "fireworks" => events(&mut x, 0.8, sr, rng, |x, s, r| {
            burst(x, s, 1.0, 0.25, None, sr, r);
        }),
        "rain" => {
            x.iter_mut().for_each(|v| *v = 0.3 * white(rng));
            highpass(&mut x, 1000.0, sr);
            events(&mut x, 60.0, sr, rng, |x, s, r| burst(x, s, 0.5, 0.001, None, sr, r));
        }
        "wind" => {
            x.iter_mut().for_each(|v| *v = white(rng));
            lowpass(&mut x, 300.0, sr);
            lowpass(&mut x, 300.0, sr);
            let phase = rng.gen_range(0.0..2.0 * PI);
            for (i, v) in x.iter_mut().enumerate() {
                *v *= 1.0 + 0.8 * (2.0 * PI * 0.4 * time(i) + phase).sin();
            }
        }
        "thunderstorm" => {
            x.iter_mut().for_each(|v| *v = 0.1 * white(rng));
            highpass(&mut x, 1000.0, sr);
            let mut rumble: Vec<f64> = (0..len).map(|_| white(rng)).collect();
            lowpass(&mut rumble, 80.0, sr);
            lowpass(&mut rumble, 80.0, sr);
            let centre = rng.gen_range(0.2..0.8) * len as f64 / sr;
            for (i, (v, r)) in x.iter_mut().zip(rumble).enumerate() {
                let d = time(i) - centre;
                *v += 20.0 * r * (-(d * d) / 0.1).exp();
            }
        }
        other => unreachable!("unknown noise class {other}"),
    }
    x.into_iter().map(|v| v as f32).collect()
}
