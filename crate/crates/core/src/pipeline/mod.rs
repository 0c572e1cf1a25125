//! Staged experiment runner: corpus, backbone, calibration, extraction,
//! detector training, evaluation, robustness sweep and export.
//!
//! Every stage reads its inputs from and writes its artifacts to one output
//! directory, and records an audit file with the config hash, seed and
//! content hashes of everything it read and wrote.

mod stages;
mod sweep;
mod table;

pub use stages::{Pipeline, StageOutcome};
pub use sweep::{SweepCell, SweepOutcome};
pub use table::FeatureTable;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::{log_mel, FeatureMap, LogMelConfig, Waveform, LOG_FLOOR};
use crate::corpus::CorpusSpec;
use crate::coverage::Criterion;
use crate::error::{Error, Result};
use crate::manipulate::{resample_to, SnrFormula, PITCH_STEPS, RESAMPLE_OFFSETS, SNR_LEVELS, SPEED_RATES};
use crate::nn::SgdConfig;
use crate::util::{sha256_file, sha256_hex, write_atomic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    None,
    /// Whole map shifted to zero mean and scaled to unit variance.
    #[default]
    Utterance,
    /// Each mel bin shifted to zero mean over time.
    PerBin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontendConfig {
    /// Audio at any other rate is resampled to this before analysis.
    pub sample_rate: u32,
    pub log_mel: LogMelConfig,
    /// Frames fed to the backbone; longer maps are center-cropped, shorter
    /// ones padded with silence.
    pub frames: usize,
    pub normalize: Normalization,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        FrontendConfig { sample_rate: 16000, log_mel: LogMelConfig::default(), frames: 200, normalize: Normalization::default() }
    }
}

impl FrontendConfig {
    /// Waveform to fixed-size backbone input.
    pub fn featurize(&self, w: &Waveform) -> Result<FeatureMap> {
        let w = if w.sample_rate() == self.sample_rate { w.clone() } else { resample_to(w, self.sample_rate)? };
        let mut map = log_mel(&w, &self.log_mel)?.fit_frames(self.frames, LOG_FLOOR.ln() as f32);
        match self.normalize {
            Normalization::None => {}
            Normalization::Utterance => {
                let n = map.values.len() as f64;
                let mean = map.values.iter().map(|&v| v as f64).sum::<f64>() / n;
                let var = map.values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
                let std = var.sqrt().max(1e-8);
                map.values.iter_mut().for_each(|v| *v = ((*v as f64 - mean) / std) as f32);
            }
            Normalization::PerBin => {
                for b in 0..map.bins {
                    let mean = (0..map.frames).map(|f| map.values[f * map.bins + b] as f64).sum::<f64>() / map.frames as f64;
                    for f in 0..map.frames {
                        let v = &mut map.values[f * map.bins + b];
                        *v = (*v as f64 - mean) as f32;
                    }
                }
            }
        }
        Ok(map)
    }
}

/// Optimizer settings without the seed, which comes from the experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub momentum: f64,
    pub decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl TrainSettings {
    pub fn sgd(&self, seed: u64) -> SgdConfig {
        SgdConfig {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            decay: self.decay,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig { learning_rate: 0.01, momentum: 0.9, decay: 1e-4, epochs: 30, batch_size: 16 }
    }
}

impl BackboneConfig {
    pub fn train(&self) -> TrainSettings {
        TrainSettings {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            decay: self.decay,
            epochs: self.epochs,
            batch_size: self.batch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoverageSection {
    pub k: usize,
    /// Divide ACN counts by layer width.
    pub normalize_acn: bool,
}

impl Default for CoverageSection {
    fn default() -> Self {
        CoverageSection { k: 5, normalize_acn: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub hidden: [usize; 4],
    pub learning_rate: f64,
    pub momentum: f64,
    pub decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            hidden: crate::detector::DEFAULT_HIDDEN,
            learning_rate: 1e-2,
            momentum: 0.9,
            decay: 1e-6,
            epochs: 100,
            batch_size: 32,
        }
    }
}

impl DetectorConfig {
    pub fn train(&self) -> TrainSettings {
        TrainSettings {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            decay: self.decay,
            epochs: self.epochs,
            batch_size: self.batch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub resample_offsets: Vec<i64>,
    pub speed_rates: Vec<f64>,
    pub pitch_steps: Vec<i32>,
    pub snr_levels: Vec<f64>,
    pub snr_formula: SnrFormula,
    /// Directory of `<taxonomy>_<class>.wav` recordings; synthetic noises
    /// are used when unset.
    pub noise_dir: Option<PathBuf>,
    pub noise_seconds: f64,
    /// Cap on test clips per class; all test clips when unset.
    pub max_per_class: Option<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            resample_offsets: RESAMPLE_OFFSETS.to_vec(),
            speed_rates: SPEED_RATES.to_vec(),
            pitch_steps: PITCH_STEPS.to_vec(),
            snr_levels: SNR_LEVELS.to_vec(),
            snr_formula: SnrFormula::SquaredRatio,
            noise_dir: None,
            noise_seconds: 4.0,
            max_per_class: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Name written in the `dataset` report column.
    pub dataset: String,
    /// External manifest; the generated corpus is used when unset.
    pub manifest: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub criteria: Vec<Criterion>,
    /// Corpus generated by `gen-data`; its seed is replaced by `seed`.
    pub corpus: CorpusSpec,
    pub frontend: FrontendConfig,
    pub backbone: BackboneConfig,
    pub coverage: CoverageSection,
    pub detector: DetectorConfig,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 42,
            dataset: "synthetic".into(),
            manifest: None,
            out_dir: PathBuf::from("runs/default"),
            criteria: vec![Criterion::Acn, Criterion::Tkan],
            corpus: CorpusSpec::default(),
            frontend: FrontendConfig::default(),
            backbone: BackboneConfig::default(),
            coverage: CoverageSection::default(),
            detector: DetectorConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config { path: path.to_path_buf(), msg: e.to_string() })?;
        cfg.validate().map_err(|e| Error::Config { path: path.to_path_buf(), msg: e.to_string() })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config { path: path.to_path_buf(), msg: e.to_string() })?;
        Self::from_toml(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        if self.criteria.is_empty() {
            return Err(Error::arg("criteria: at least one criterion is required"));
        }
        if self.coverage.k == 0 {
            return Err(Error::arg("coverage.k must be positive"));
        }
        if self.frontend.frames == 0 || self.frontend.sample_rate == 0 {
            return Err(Error::arg("frontend.frames and frontend.sample_rate must be positive"));
        }
        if self.dataset.contains(',') {
            return Err(Error::arg("dataset name must not contain commas"));
        }
        self.corpus_spec().validate()?;
        self.backbone.train().sgd(0).validate()?;
        self.detector.train().sgd(0).validate()
    }

    pub fn corpus_spec(&self) -> CorpusSpec {
        CorpusSpec { seed: self.seed, ..self.corpus.clone() }
    }

    /// Hash of the resolved configuration. The output directory is left
    /// out so the same experiment hashes the same wherever it is written.
    pub fn hash(&self) -> String {
        let cfg = ExperimentConfig { out_dir: PathBuf::new(), ..self.clone() };
        sha256_hex(serde_json::to_string(&cfg).expect("config serializes").as_bytes())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }
}

/// Artifact locations inside the output directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub root: PathBuf,
    manifest: Option<PathBuf>,
}

impl RunPaths {
    pub fn new(config: &ExperimentConfig) -> Self {
        RunPaths { root: config.out_dir.clone(), manifest: config.manifest.clone() }
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.root.join("corpus")
    }
    pub fn manifest(&self) -> PathBuf {
        self.manifest.clone().unwrap_or_else(|| self.corpus_dir().join("manifest.tsv"))
    }
    pub fn backbone(&self) -> PathBuf {
        self.root.join("backbone.nsw")
    }
    pub fn backbone_spec(&self) -> PathBuf {
        self.root.join("backbone.json")
    }
    pub fn backbone_log(&self) -> PathBuf {
        self.root.join("backbone_log.csv")
    }
    pub fn thresholds(&self) -> PathBuf {
        self.root.join("thresholds.txt")
    }
    pub fn traces(&self) -> PathBuf {
        self.root.join("traces.csv")
    }
    pub fn features(&self, c: Criterion) -> PathBuf {
        self.root.join(format!("features_{c}.csv"))
    }
    pub fn detector(&self, c: Criterion) -> PathBuf {
        self.root.join(format!("detector_{c}.nsw"))
    }
    pub fn detector_log(&self, c: Criterion) -> PathBuf {
        self.root.join(format!("detector_{c}_log.csv"))
    }
    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }
    pub fn sweep(&self) -> PathBuf {
        self.root.join("sweep")
    }
    pub fn export(&self) -> PathBuf {
        self.root.join("export")
    }
    pub fn audit(&self, stage: &str) -> PathBuf {
        self.root.join("audit").join(format!("{stage}.json"))
    }

    /// Path relative to the output directory when inside it.
    pub fn display(&self, p: &Path) -> String {
        p.strip_prefix(&self.root).unwrap_or(p).to_string_lossy().replace('\\', "/")
    }
}

/// Fails with the producing stage's name when `path` is absent.
pub(crate) fn require(path: &Path, stage: &'static str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingPrerequisite { stage, path: path.to_path_buf() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub stage: String,
    pub config_sha256: String,
    pub seed: u64,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    #[serde(skip_serializing_if = "serde_json::Map::is_empty", default)]
    pub notes: serde_json::Map<String, serde_json::Value>,
}

pub(crate) fn digests(paths: &RunPaths, files: &[PathBuf]) -> Result<Vec<FileDigest>> {
    files
        .iter()
        .map(|f| Ok(FileDigest { path: paths.display(f), sha256: sha256_file(f)? }))
        .collect()
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}
