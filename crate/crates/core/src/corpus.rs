//! Deterministic synthetic corpus of "real" and "fake" voices.
//!
//! Real clips are harmonic stacks with a per-speaker pitch range, vibrato,
//! formant emphasis, a syllable-rate envelope and a pink-noise floor. Fake
//! clips come from the same generator with an artifact applied.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{load_wav, save_wav, stft, WavDepth, Waveform};
use crate::error::{Error, Result};
use crate::fft;
use crate::metrics::{roc_auc, Label, ScoredSet};
use crate::util::{derive_seed, write_atomic};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FakeArtifact {
    /// STFT phase snapped to `levels` uniform values per frame.
    PhaseQuantization { levels: u32 },
    /// All content above `cutoff_hz` removed.
    BandLimit { cutoff_hz: f64 },
    /// Each harmonic detuned by up to `amount` (relative).
    HarmonicJitter { amount: f64 },
}

impl Default for FakeArtifact {
    fn default() -> Self {
        FakeArtifact::PhaseQuantization { levels: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub num_speakers: usize,
    /// Clips per speaker and per class.
    pub clips_per_speaker: usize,
    pub clip_seconds: f64,
    pub sample_rate: u32,
    pub seed: u64,
    pub fake_artifact: FakeArtifact,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            num_speakers: 8,
            clips_per_speaker: 40,
            clip_seconds: 2.0,
            sample_rate: 16000,
            seed: 42,
            fake_artifact: FakeArtifact::default(),
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_speakers == 0 || self.clips_per_speaker == 0 {
            return Err(Error::arg("corpus needs at least one speaker and one clip"));
        }
        if !(self.clip_seconds > 0.0 && self.clip_seconds.is_finite()) || self.sample_rate < 4000 {
            return Err(Error::arg("clip length must be positive and the rate at least 4 kHz"));
        }
        match self.fake_artifact {
            FakeArtifact::PhaseQuantization { levels } if levels < 2 => {
                Err(Error::arg("phase quantization needs at least two levels"))
            }
            FakeArtifact::BandLimit { cutoff_hz } if !(cutoff_hz > 0.0) => Err(Error::arg("band limit must be positive")),
            FakeArtifact::HarmonicJitter { amount } if !(0.0..1.0).contains(&amount) => {
                Err(Error::arg("harmonic jitter must lie in [0, 1)"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::arg(format!("split must be train, val or test, got `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    /// Relative to the manifest's directory unless absolute.
    pub path: String,
    pub label: Label,
    pub speaker_id: usize,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        self.records
            .iter()
            .map(|r| format!("{}\t{}\t{}\t{}\n", r.path, r.label, r.speaker_id, r.split))
            .collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = Some(i + 1);
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(Error::parse(line_no, format!("expected 4 tab-separated fields, found {}", f.len())));
            }
            let label = f[1].parse().map_err(|e: Error| Error::parse(line_no, e.to_string()))?;
            let speaker_id = f[2]
                .parse()
                .map_err(|_| Error::parse(line_no, format!("speaker id `{}` is not a non-negative integer", f[2])))?;
            let split = f[3].parse().map_err(|e: Error| Error::parse(line_no, e.to_string()))?;
            if f[0].is_empty() {
                return Err(Error::parse(line_no, "empty path"));
            }
            if !seen.insert(f[0].to_string()) {
                return Err(Error::parse(line_no, format!("duplicate path `{}`", f[0])));
            }
            records.push(ManifestRecord { path: f[0].to_string(), label, speaker_id, split });
        }
        Ok(Manifest { records })
    }

    /// Absolute location of a record given the manifest's directory.
    pub fn resolve(base: &Path, record: &ManifestRecord) -> PathBuf {
        base.join(&record.path)
    }

    pub fn check_paths(&self, base: &Path) -> Result<()> {
        for r in &self.records {
            let p = Self::resolve(base, r);
            if !p.is_file() {
                return Err(Error::arg(format!("manifest entry {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }
}

pub fn write_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    write_atomic(path, manifest.to_text().as_bytes())
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::arg(format!("cannot read manifest {}: {e}", path.display())))?;
    Manifest::from_text(&text)
}

/// Split sizes for `n` clips: 60/20/20 rounded, remainder to test.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = (n as f64 * 0.6).round() as usize;
    let val = ((n as f64 * 0.2).round() as usize).min(n - train);
    (train, val, n - train - val)
}

fn split_of(index: usize, n: usize) -> Split {
    let (train, val, _) = split_sizes(n);
    if index < train {
        Split::Train
    } else if index < train + val {
        Split::Val
    } else {
        Split::Test
    }
}

/// Per-speaker voice parameters.
struct Voice {
    f0: f64,
    formants: [(f64, f64); 3],
    tilt: f64,
}

fn voice(spec: &CorpusSpec, speaker: usize) -> Voice {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 0x7000 + speaker as u64));
    let span = if spec.num_speakers > 1 { speaker as f64 / (spec.num_speakers - 1) as f64 } else { 0.5 };
    let f0 = 100.0 + 200.0 * span;
    let formants = [
        (rng.gen_range(450.0..850.0), rng.gen_range(80.0..160.0)),
        (rng.gen_range(1000.0..2000.0), rng.gen_range(100.0..220.0)),
        (rng.gen_range(2300.0..3200.0), rng.gen_range(150.0..300.0)),
    ];
    Voice { f0, formants, tilt: 1.0 }
}

/// Harmonic amplitude at frequency `f` for this voice.
fn harmonic_gain(v: &Voice, f: f64, h: usize) -> f64 {
    let emphasis: f64 = v
        .formants
        .iter()
        .map(|&(c, bw)| (-0.5 * ((f - c) / bw).powi(2)).exp())
        .sum();
    (0.15 + emphasis) / (h as f64).powf(v.tilt)
}

/// Pink noise by the Voss-McCartney scheme with 12 rows.
fn pink_noise(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut rows = [0.0f64; 12];
    rows.iter_mut().for_each(|r| *r = rng.gen_range(-1.0..1.0));
    (0..len)
        .map(|i| {
            let k = (i + 1).trailing_zeros() as usize;
            if k < rows.len() {
                rows[k] = rng.gen_range(-1.0..1.0);
            }
            rows.iter().sum::<f64>() / rows.len() as f64
        })
        .collect()
}

fn harmonic_clip(spec: &CorpusSpec, v: &Voice, jitter: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sr = spec.sample_rate as f64;
    let len = (spec.clip_seconds * sr).round() as usize;
    let f0 = v.f0 * rng.gen_range(0.95..1.05);
    let vib_rate = rng.gen_range(4.0..7.0);
    let vib_depth = rng.gen_range(0.01..0.03);
    let vib_phase = rng.gen_range(0.0..2.0 * PI);
    let glide = rng.gen_range(-0.08..0.08);
    let syll_rate = rng.gen_range(3.0..5.0);
    let syll_phase = rng.gen_range(0.0..2.0 * PI);
    let max_h = ((0.45 * sr / (f0 * 1.15)).floor() as usize).max(1);
    let detune: Vec<f64> = (1..=max_h).map(|_| 1.0 + jitter * rng.gen_range(-1.0..1.0)).collect();
    let gains: Vec<f64> = (1..=max_h).map(|h| harmonic_gain(v, f0 * h as f64, h)).collect();
    let mut phase = rng.gen_range(0.0..2.0 * PI);
    let mut out = Vec::with_capacity(len);
    for i in 0..len {
        let t = i as f64 / sr;
        let inst = f0 * (1.0 + glide * (t / spec.clip_seconds - 0.5)) * (1.0 + vib_depth * (2.0 * PI * vib_rate * t + vib_phase).sin());
        phase = (phase + 2.0 * PI * inst / sr) % (2.0 * PI);
        let sample = if jitter == 0.0 {
            // sin(hθ) by the Chebyshev recursion
            let two_cos = 2.0 * phase.cos();
            let (mut prev, mut cur) = (0.0, phase.sin());
            let mut acc = 0.0;
            for &g in &gains {
                acc += g * cur;
                let next = two_cos * cur - prev;
                prev = cur;
                cur = next;
            }
            acc
        } else {
            gains.iter().zip(&detune).enumerate().map(|(h, (&g, &d))| g * ((h + 1) as f64 * d * phase).sin()).sum()
        };
        let env = 0.25 + 0.75 * (2.0 * PI * syll_rate * t + syll_phase).sin().max(0.0).sqrt();
        out.push(sample * env);
    }
    let floor = pink_noise(len, rng);
    let sig_rms = (out.iter().map(|x| x * x).sum::<f64>() / len as f64).sqrt();
    for (o, n) in out.iter_mut().zip(floor) {
        *o += sig_rms * NOISE_FLOOR * n;
    }
    out
}

/// Pink-noise floor relative to the voiced signal RMS.
const NOISE_FLOOR: f64 = 0.001;

/// Phase quantization works on 1 ms frames so the error spreads across the
/// whole band instead of hiding next to each harmonic.
const QUANT_WINDOW: usize = 16;
const BAND_WINDOW: usize = 512;

/// Rebuilds `x` through a centered Hann STFT (hop n/4) after mapping each
/// frame's spectrum with `f`.
fn respectrum(x: &[f64], n: usize, mut f: impl FnMut(&mut [Complex64])) -> Vec<f64> {
    let hop = n / 4;
    let pad = n / 2;
    let window = fft::hann(n);
    let mut padded = vec![0.0; x.len() + 2 * pad];
    padded[pad..pad + x.len()].copy_from_slice(x);
    let frames = 1 + x.len() / hop;
    let mut y = vec![0.0; (frames - 1) * hop + n];
    let mut wsum = vec![0.0; y.len()];
    for fr in 0..frames {
        let s = fr * hop;
        let frame: Vec<f64> = padded[s..s + n].iter().zip(&window).map(|(a, w)| a * w).collect();
        let mut spec = fft::rfft(&frame);
        f(&mut spec);
        let back = fft::irfft(&spec, n);
        for i in 0..n {
            y[s + i] += back[i] * window[i];
            wsum[s + i] += window[i] * window[i];
        }
    }
    (pad..pad + x.len()).map(|i| if wsum[i] > 1e-10 { y[i] / wsum[i] } else { 0.0 }).collect()
}

fn apply_artifact(x: Vec<f64>, artifact: FakeArtifact, sr: u32) -> Vec<f64> {
    match artifact {
        FakeArtifact::PhaseQuantization { levels } => {
            let step = 2.0 * PI / levels as f64;
            respectrum(&x, QUANT_WINDOW, |spec| {
                for c in spec.iter_mut() {
                    *c = Complex64::from_polar(c.norm(), (c.arg() / step).round() * step);
                }
            })
        }
        FakeArtifact::BandLimit { cutoff_hz } => {
            let first = (cutoff_hz * BAND_WINDOW as f64 / sr as f64).ceil() as usize;
            respectrum(&x, BAND_WINDOW, |spec| {
                for c in spec.iter_mut().skip(first) {
                    *c = Complex64::new(0.0, 0.0);
                }
            })
        }
        FakeArtifact::HarmonicJitter { .. } => x,
    }
}

/// Seed used for clip `index` of class `label`.
fn clip_seed(seed: u64, label: Label, speaker: usize, clip: usize) -> u64 {
    let class = if label.is_fake() { 1u64 } else { 0 };
    derive_seed(seed, (class << 40) | ((speaker as u64) << 20) | clip as u64)
}

/// Synthesizes one clip.
pub fn synthesize_clip(spec: &CorpusSpec, label: Label, speaker: usize, clip: usize) -> Result<Waveform> {
    spec.validate()?;
    let v = voice(spec, speaker);
    let mut rng = ChaCha8Rng::seed_from_u64(clip_seed(spec.seed, label, speaker, clip));
    let jitter = match (label, spec.fake_artifact) {
        (Label::Fake, FakeArtifact::HarmonicJitter { amount }) => amount,
        _ => 0.0,
    };
    let mut x = harmonic_clip(spec, &v, jitter, &mut rng);
    if label.is_fake() {
        x = apply_artifact(x, spec.fake_artifact, spec.sample_rate);
    }
    let target_rms = rng.gen_range(0.05..0.15);
    let r = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
    let g = if r > 0.0 { target_rms / r } else { 0.0 };
    Waveform::new(x.into_iter().map(|v| ((v * g).clamp(-1.0, 1.0)) as f32).collect(), spec.sample_rate)
}

/// Writes every clip as 16-bit WAV under `out_dir/clips` plus
/// `out_dir/manifest.tsv`, and returns the manifest.
pub fn generate_corpus(spec: &CorpusSpec, out_dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    for label in [Label::Real, Label::Fake] {
        std::fs::create_dir_all(out_dir.join("clips").join(label.as_str()))?;
    }
    let mut jobs = Vec::new();
    for label in [Label::Real, Label::Fake] {
        for speaker in 0..spec.num_speakers {
            for clip in 0..spec.clips_per_speaker {
                jobs.push((label, speaker, clip));
            }
        }
    }
    let records: Vec<ManifestRecord> = jobs
        .par_iter()
        .map(|&(label, speaker, clip)| {
            let rel = format!("clips/{label}/spk{speaker:02}_{clip:03}.wav");
            let w = synthesize_clip(spec, label, speaker, clip)?;
            save_wav(&w, out_dir.join(&rel), WavDepth::Pcm16)?;
            Ok(ManifestRecord { path: rel, label, speaker_id: speaker, split: split_of(clip, spec.clips_per_speaker) })
        })
        .collect::<Result<_>>()?;
    let manifest = Manifest { records };
    write_manifest(&manifest, &out_dir.join("manifest.tsv"))?;
    Ok(manifest)
}

/// Mean over 256/64 Hann frames of the log spectral flatness
/// `ln(geometric mean / arithmetic mean)` of the power spectrum, DC excluded.
pub fn spectral_flatness(w: &Waveform) -> Result<f64> {
    let s = stft(w, 256, 64)?;
    let mut total = 0.0;
    for frame in &s.frames {
        let power: Vec<f64> = frame[1..].iter().map(|c| c.norm_sqr() + 1e-12).collect();
        let log_mean = power.iter().map(|p| p.ln()).sum::<f64>() / power.len() as f64;
        let mean = power.iter().sum::<f64>() / power.len() as f64;
        total += log_mean - mean.ln();
    }
    Ok(total / s.frames.len() as f64)
}

/// AUC of spectral flatness as a fake score over one split.
pub fn flatness_baseline_auc(manifest: &Manifest, base: &Path, split: Split) -> Result<f64> {
    let pairs: Vec<(f64, Label)> = manifest
        .split(split)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|r| Ok((spectral_flatness(&load_wav(Manifest::resolve(base, r))?)?, r.label)))
        .collect::<Result<_>>()?;
    roc_auc(&ScoredSet::new(pairs))
}
