//! WAV I/O and the signal-processing primitives shared by the backbone
//! frontend and the manipulation harness.

use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft;

/// Floor added to mel energies before the logarithm.
pub const LOG_FLOOR: f64 = 1e-6;

/// Mono audio at a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::arg("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::arg(format!("non-finite sample at index {i}")));
        }
        Ok(Waveform { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
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

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub(crate) fn require_non_empty(&self, what: &str) -> Result<()> {
        if self.samples.is_empty() {
            Err(Error::arg(format!("{what}: empty waveform")))
        } else {
            Ok(())
        }
    }
}

/// Storage encoding for [`save_wav`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WavDepth {
    Pcm16,
    Float32,
}

fn map_hound(e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => {
            Error::parse(None, "truncated WAV file")
        }
        hound::Error::IoError(io) => Error::Io(io),
        hound::Error::FormatError(msg) => Error::parse(None, format!("malformed WAV: {msg}")),
        hound::Error::UnfinishedSample => Error::parse(None, "truncated WAV sample data"),
        hound::Error::TooWide | hound::Error::Unsupported | hound::Error::InvalidSampleFormat => {
            Error::format(format!("unsupported WAV encoding: {e}"))
        }
    }
}

/// While reading sample data any short read means the data chunk is shorter
/// than its header claims.
fn map_sample_err(e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::parse(None, format!("truncated WAV sample data: {io}")),
        other => map_hound(other),
    }
}

/// Reads a PCM16 or float32 WAV file, averaging stereo down to mono.
pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let reader = hound::WavReader::open(path.as_ref()).map_err(map_hound)?;
    let spec = reader.spec();
    if spec.channels == 0 || spec.channels > 2 {
        return Err(Error::format(format!(
            "{} channels not supported (mono or stereo only)",
            spec.channels
        )));
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(map_sample_err)?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(map_sample_err)?,
        (fmt, bits) => {
            return Err(Error::format(format!(
                "unsupported sample encoding {fmt:?} {bits}-bit (PCM16 or float32 only)"
            )))
        }
    };
    let samples = if spec.channels == 2 {
        if !interleaved.len().is_multiple_of(2) {
            return Err(Error::parse(None, "stereo data ends mid-frame"));
        }
        interleaved.chunks_exact(2).map(|p| (p[0] + p[1]) * 0.5).collect()
    } else {
        interleaved
    };
    Waveform::new(samples, spec.sample_rate)
}

/// Quantizes one sample to a 16-bit word: round half away from zero, clamp.
pub fn quantize_pcm16(x: f32) -> i16 {
    (x as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn save_wav(w: &Waveform, path: impl AsRef<Path>, depth: WavDepth) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: match depth {
            WavDepth::Pcm16 => 16,
            WavDepth::Float32 => 32,
        },
        sample_format: match depth {
            WavDepth::Pcm16 => hound::SampleFormat::Int,
            WavDepth::Float32 => hound::SampleFormat::Float,
        },
    };
    let mut writer = hound::WavWriter::create(path.as_ref(), spec).map_err(map_hound)?;
    for &s in &w.samples {
        match depth {
            WavDepth::Pcm16 => writer.write_sample(quantize_pcm16(s)),
            WavDepth::Float32 => writer.write_sample(s),
        }
        .map_err(map_hound)?;
    }
    writer.finalize().map_err(map_hound)
}

/// Root mean square amplitude.
pub fn rms(w: &Waveform) -> Result<f64> {
    w.require_non_empty("rms")?;
    Ok(rms_of(&w.samples))
}

pub(crate) fn rms_of(samples: &[f32]) -> f64 {
    let sum: f64 = samples.iter().map(|&s| (s as f64) * (s as f64)).sum();
    (sum / samples.len() as f64).sqrt()
}

/// One-sided complex STFT, frames in time order.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub window_size: usize,
    pub hop: usize,
    pub frames: Vec<Vec<Complex64>>,
}

impl Spectrogram {
    pub fn num_bins(&self) -> usize {
        self.window_size / 2 + 1
    }
}

/// Number of full frames that fit in `len` samples.
pub fn frame_count(len: usize, window_size: usize, hop: usize) -> usize {
    if len < window_size {
        0
    } else {
        1 + (len - window_size) / hop
    }
}

/// Hann-windowed STFT without centering padding.
pub fn stft(w: &Waveform, window_size: usize, hop: usize) -> Result<Spectrogram> {
    if !window_size.is_power_of_two() {
        return Err(Error::arg(format!("window size {window_size} is not a power of two")));
    }
    if hop == 0 || hop > window_size {
        return Err(Error::arg(format!("hop {hop} must be in 1..={window_size}")));
    }
    if w.len() < window_size {
        return Err(Error::arg(format!(
            "signal of {} samples is shorter than one {window_size}-sample window",
            w.len()
        )));
    }
    let window = fft::hann(window_size);
    let frames = (0..frame_count(w.len(), window_size, hop))
        .map(|f| {
            let frame: Vec<f64> = w.samples[f * hop..f * hop + window_size]
                .iter()
                .zip(&window)
                .map(|(&s, &h)| s as f64 * h)
                .collect();
            fft::rfft(&frame)
        })
        .collect();
    Ok(Spectrogram { window_size, hop, frames })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogMelConfig {
    pub window_size: usize,
    pub hop: usize,
    pub mel_bins: usize,
}

impl Default for LogMelConfig {
    fn default() -> Self {
        LogMelConfig { window_size: 400, hop: 160, mel_bins: 64 }
    }
}

impl LogMelConfig {
    /// FFT length: the analysis window zero-padded to the next power of two.
    pub fn n_fft(&self) -> usize {
        self.window_size.next_power_of_two()
    }
}

/// Frames × bins log-mel energies, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub frames: usize,
    pub bins: usize,
    pub values: Vec<f32>,
    pub config: LogMelConfig,
}

impl FeatureMap {
    pub fn row(&self, frame: usize) -> &[f32] {
        &self.values[frame * self.bins..(frame + 1) * self.bins]
    }

    /// Center-crops or pads (with `pad_value`, split evenly on both sides)
    /// to exactly `target` frames.
    pub fn fit_frames(&self, target: usize, pad_value: f32) -> FeatureMap {
        let mut values = Vec::with_capacity(target * self.bins);
        if self.frames >= target {
            let start = (self.frames - target) / 2;
            values.extend_from_slice(&self.values[start * self.bins..(start + target) * self.bins]);
        } else {
            let left = (target - self.frames) / 2;
            let right = target - self.frames - left;
            values.resize(left * self.bins, pad_value);
            values.extend_from_slice(&self.values);
            values.resize(values.len() + right * self.bins, pad_value);
        }
        FeatureMap { frames: target, bins: self.bins, values, config: self.config }
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Center frequencies (Hz) of an HTK-scale triangular filterbank spanning
/// 0 Hz to Nyquist.
pub fn mel_centers(mel_bins: usize, sample_rate: u32) -> Vec<f64> {
    let top = hz_to_mel(sample_rate as f64 / 2.0);
    (1..=mel_bins)
        .map(|i| mel_to_hz(top * i as f64 / (mel_bins + 1) as f64))
        .collect()
}

/// Triangular filter weights, `mel_bins` rows of `n_fft/2 + 1` columns.
pub fn mel_filterbank(mel_bins: usize, n_fft: usize, sample_rate: u32) -> Vec<Vec<f64>> {
    let top = hz_to_mel(sample_rate as f64 / 2.0);
    let edges: Vec<f64> = (0..mel_bins + 2)
        .map(|i| mel_to_hz(top * i as f64 / (mel_bins + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / n_fft as f64;
    (0..mel_bins)
        .map(|m| {
            let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..=n_fft / 2)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    ((f - lo) / (c - lo)).min((hi - f) / (hi - c)).max(0.0)
                })
                .collect()
        })
        .collect()
}

/// Log-mel spectrogram: Hann-windowed frames zero-padded to a power-of-two
/// FFT, power spectrum through an HTK mel filterbank, then `ln(x + 1e-6)`.
pub fn log_mel(w: &Waveform, config: &LogMelConfig) -> Result<FeatureMap> {
    let LogMelConfig { window_size, hop, mel_bins } = *config;
    if window_size == 0 || hop == 0 || mel_bins == 0 {
        return Err(Error::arg("log-mel window, hop and mel_bins must be positive"));
    }
    if w.len() < window_size {
        return Err(Error::arg(format!(
            "signal of {} samples is shorter than one {window_size}-sample window",
            w.len()
        )));
    }
    let n_fft = config.n_fft();
    let window = fft::hann(window_size);
    let bank = mel_filterbank(mel_bins, n_fft, w.sample_rate);
    let frames = frame_count(w.len(), window_size, hop);
    let mut values = Vec::with_capacity(frames * mel_bins);
    let mut buf = vec![0.0f64; n_fft];
    for f in 0..frames {
        let start = f * hop;
        for (i, b) in buf.iter_mut().enumerate().take(window_size) {
            *b = w.samples[start + i] as f64 * window[i];
        }
        let spectrum = fft::rfft(&buf);
        let power: Vec<f64> = spectrum.iter().map(|c| c.norm_sqr()).collect();
        for filter in &bank {
            let e: f64 = filter.iter().zip(&power).map(|(a, b)| a * b).sum();
            values.push((e + LOG_FLOOR).ln() as f32);
        }
    }
    Ok(FeatureMap { frames, bins: mel_bins, values, config: *config })
}
