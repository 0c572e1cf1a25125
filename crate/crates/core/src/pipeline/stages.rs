use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::json;

use super::table::{FeatureTable, TableRow};
use super::{digests, require, write_json, AuditRecord, ExperimentConfig, RunPaths};
use crate::audio::load_wav;
use crate::backbone::{train_backbone, ActivationTrace, Backbone, NetworkSpec};
use crate::corpus::{generate_corpus, load_manifest, Manifest, ManifestRecord, Split};
use crate::coverage::{calibrate_thresholds, extract, CoverageConfig, Criterion, FeatureVector, LayerThresholds};
use crate::detector::{train_detector, DetectorModel};
use crate::error::{Error, Result};
use crate::manipulate::{Manipulation, NoiseBank};
use crate::metrics::{EvalReport, Label, ScoredSet, REPORT_HEADER};
use crate::detector::DECISION_THRESHOLD;
use crate::nn::EpochStats;
use crate::nsw::{load_weights, save_weights};
use crate::util::{derive_seed, write_atomic};

/// What a stage wrote.
#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub stage: &'static str,
    pub outputs: Vec<PathBuf>,
    pub notes: serde_json::Map<String, serde_json::Value>,
}

pub struct Pipeline {
    pub config: ExperimentConfig,
    pub paths: RunPaths,
    pool: rayon::ThreadPool,
}

impl Pipeline {
    /// `jobs = 0` lets the worker pool pick a size.
    pub fn new(config: ExperimentConfig, jobs: usize) -> Result<Self> {
        config.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::arg(format!("cannot start worker pool: {e}")))?;
        Ok(Pipeline { paths: RunPaths::new(&config), config, pool })
    }

    pub(crate) fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        self.pool.install(f)
    }

    pub(crate) fn audit(
        &self,
        stage: &'static str,
        inputs: &[PathBuf],
        outputs: &[PathBuf],
        notes: serde_json::Map<String, serde_json::Value>,
    ) -> Result<StageOutcome> {
        let record = AuditRecord {
            stage: stage.to_string(),
            config_sha256: self.config.hash(),
            seed: self.config.seed,
            inputs: digests(&self.paths, inputs)?,
            outputs: digests(&self.paths, outputs)?,
            notes: notes.clone(),
        };
        write_json(&self.paths.audit(stage), &record)?;
        log::info!("{stage}: wrote {} artifact(s)", outputs.len());
        Ok(StageOutcome { stage, outputs: outputs.to_vec(), notes })
    }

    pub(crate) fn manifest(&self) -> Result<(Manifest, PathBuf)> {
        let path = self.paths.manifest();
        require(&path, "gen-data")?;
        let manifest = load_manifest(&path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        manifest.check_paths(&base)?;
        Ok((manifest, base))
    }

    pub(crate) fn backbone(&self) -> Result<Backbone> {
        require(&self.paths.backbone(), "train-backbone")?;
        require(&self.paths.backbone_spec(), "train-backbone")?;
        let spec: NetworkSpec = serde_json::from_str(&std::fs::read_to_string(self.paths.backbone_spec())?)?;
        Backbone::new(spec, &load_weights(self.paths.backbone())?)
    }

    pub(crate) fn thresholds(&self) -> Result<LayerThresholds> {
        require(&self.paths.thresholds(), "calibrate")?;
        LayerThresholds::from_text(&std::fs::read_to_string(self.paths.thresholds())?)
    }

    pub(crate) fn detector(&self, c: Criterion) -> Result<DetectorModel> {
        require(&self.paths.detector(c), "train-detector")?;
        let model = DetectorModel::load(self.paths.detector(c))?;
        if model.criterion != c {
            return Err(Error::format(format!("{} holds a {} detector", self.paths.detector(c).display(), model.criterion)));
        }
        Ok(model)
    }

    pub(crate) fn coverage(&self, c: Criterion) -> CoverageConfig {
        CoverageConfig { criterion: c, k: self.config.coverage.k, normalize_acn: self.config.coverage.normalize_acn }
    }

    pub(crate) fn noise_bank(&self) -> Result<NoiseBank> {
        match &self.config.sweep.noise_dir {
            Some(dir) => NoiseBank::load_dir(dir, self.config.frontend.sample_rate),
            None => NoiseBank::synthetic(
                self.config.frontend.sample_rate,
                self.config.sweep.noise_seconds,
                derive_seed(self.config.seed, 0xB0A),
            ),
        }
    }

    /// Activation traces for `records`, in record order, after an optional
    /// manipulation of the audio.
    pub(crate) fn traces(
        &self,
        backbone: &Backbone,
        base: &Path,
        records: &[&ManifestRecord],
        manipulation: Option<(&Manipulation, &NoiseBank)>,
    ) -> Result<Vec<ActivationTrace>> {
        let frontend = &self.config.frontend;
        let formula = self.config.sweep.snr_formula;
        self.install(|| {
            records
                .par_iter()
                .map(|r| {
                    let mut w = load_wav(Manifest::resolve(base, r))?;
                    if let Some((m, bank)) = manipulation {
                        w = m.apply(&w, bank, formula)?;
                    }
                    Ok(backbone.forward(&frontend.featurize(&w)?)?.1)
                })
                .collect()
        })
    }

    fn features(&self, traces: &[ActivationTrace], c: Criterion, th: Option<&LayerThresholds>) -> Result<Vec<FeatureVector>> {
        let cov = self.coverage(c);
        traces.iter().map(|t| extract(t, &cov, th)).collect()
    }

    /// Test-split records, capped per class by the sweep's sample count.
    pub(crate) fn test_records<'a>(&self, manifest: &'a Manifest) -> Vec<&'a ManifestRecord> {
        let cap = self.config.sweep.max_per_class.unwrap_or(usize::MAX);
        let (mut real, mut fake) = (0, 0);
        manifest
            .split(Split::Test)
            .filter(|r| {
                let n = if r.label.is_fake() { &mut fake } else { &mut real };
                *n += 1;
                *n <= cap
            })
            .collect()
    }

    pub(crate) fn report(
        &self,
        c: Criterion,
        model: &DetectorModel,
        rows: &[(Vec<f64>, Label)],
        manipulation: Option<&Manipulation>,
    ) -> Result<EvalReport> {
        let pairs = rows.iter().map(|(x, l)| Ok((model.score(x)?, *l))).collect::<Result<Vec<_>>>()?;
        let (name, magnitude) = manipulation.map(|m| m.label()).unwrap_or_else(|| ("none".into(), "-".into()));
        EvalReport::compute(&ScoredSet::new(pairs), DECISION_THRESHOLD, &self.config.dataset, c.name(), &name, &magnitude)
    }

    /// Scores the test split under one condition, going through the audio
    /// path (load, manipulate, featurize, trace, features).
    pub fn evaluate_condition(&self, manipulation: Option<&Manipulation>, bank: &NoiseBank) -> Result<Vec<EvalReport>> {
        let (manifest, base) = self.manifest()?;
        let backbone = self.backbone()?;
        let records = self.test_records(&manifest);
        let thresholds = self.optional_thresholds()?;
        let models = self.models()?;
        let traces = self.traces(&backbone, &base, &records, manipulation.map(|m| (m, bank)))?;
        self.reports_from_traces(&records, &traces, thresholds.as_ref(), &models, manipulation)
    }

    pub(crate) fn optional_thresholds(&self) -> Result<Option<LayerThresholds>> {
        if self.config.criteria.contains(&Criterion::Acn) {
            Ok(Some(self.thresholds()?))
        } else {
            Ok(None)
        }
    }

    pub(crate) fn models(&self) -> Result<Vec<(Criterion, DetectorModel)>> {
        self.config.criteria.iter().map(|&c| Ok((c, self.detector(c)?))).collect()
    }

    pub(crate) fn reports_from_traces(
        &self,
        records: &[&ManifestRecord],
        traces: &[ActivationTrace],
        thresholds: Option<&LayerThresholds>,
        models: &[(Criterion, DetectorModel)],
        manipulation: Option<&Manipulation>,
    ) -> Result<Vec<EvalReport>> {
        models
            .iter()
            .map(|(c, model)| {
                let feats = self.features(traces, *c, thresholds)?;
                let rows: Vec<(Vec<f64>, Label)> =
                    feats.into_iter().zip(records).map(|(f, r)| (f.values, r.label)).collect();
                self.report(*c, model, &rows, manipulation)
            })
            .collect()
    }

    pub fn gen_data(&self) -> Result<StageOutcome> {
        let dir = self.paths.corpus_dir();
        let spec = self.config.corpus_spec();
        let manifest = self.install(|| generate_corpus(&spec, &dir))?;
        let mut outputs = vec![dir.join("manifest.tsv")];
        outputs.extend(manifest.records.iter().map(|r| dir.join(&r.path)));
        let mut notes = serde_json::Map::new();
        notes.insert("clips".into(), json!(manifest.records.len()));
        for split in [Split::Train, Split::Val, Split::Test] {
            notes.insert(split.to_string(), json!(manifest.split(split).count()));
        }
        self.audit("gen-data", &[], &outputs, notes)
    }

    pub fn train_backbone(&self) -> Result<StageOutcome> {
        let (manifest, base) = self.manifest()?;
        let fe = &self.config.frontend;
        let num_speakers = manifest.records.iter().map(|r| r.speaker_id + 1).max().unwrap_or(0);
        let real = |split: Split| manifest.records.iter().filter(move |r| r.split == split && !r.label.is_fake());
        let train: Vec<&ManifestRecord> = real(Split::Train).collect();
        let held_out: Vec<&ManifestRecord> = real(Split::Val).chain(real(Split::Test)).collect();
        let load = |records: &[&ManifestRecord]| {
            self.install(|| {
                records
                    .par_iter()
                    .map(|r| Ok((fe.featurize(&load_wav(Manifest::resolve(&base, r))?)?, r.speaker_id)))
                    .collect::<Result<Vec<_>>>()
            })
        };
        let data = load(&train)?;
        let spec = NetworkSpec::reference(fe.frames, fe.log_mel.mel_bins, num_speakers);
        let sgd = self.config.backbone.train().sgd(derive_seed(self.config.seed, 1));
        let (weights, log) = train_backbone(&spec, &data, &sgd)?;
        save_weights(&weights, self.paths.backbone())?;
        write_json(&self.paths.backbone_spec(), &spec)?;
        write_atomic(&self.paths.backbone_log(), epoch_log(&log).as_bytes())?;

        let backbone = Backbone::new(spec, &weights)?;
        let held = load(&held_out)?;
        let correct = self.install(|| {
            held.par_iter().map(|(m, y)| Ok((backbone.predict_class(m)? == *y) as usize)).collect::<Result<Vec<_>>>()
        })?;
        let acc = correct.iter().sum::<usize>() as f64 / correct.len().max(1) as f64;
        log::info!("backbone held-out speaker accuracy {acc:.4}");
        let mut notes = serde_json::Map::new();
        notes.insert("speakers".into(), json!(num_speakers));
        notes.insert("train_clips".into(), json!(data.len()));
        notes.insert("final_train_accuracy".into(), json!(log.last().map(|e| e.accuracy)));
        notes.insert("held_out_accuracy".into(), json!(acc));
        let inputs = self.record_paths(&base, &train, &self.paths.manifest());
        let outputs = vec![self.paths.backbone(), self.paths.backbone_spec(), self.paths.backbone_log()];
        self.audit("train-backbone", &inputs, &outputs, notes)
    }

    fn record_paths(&self, base: &Path, records: &[&ManifestRecord], manifest: &Path) -> Vec<PathBuf> {
        let mut v = vec![manifest.to_path_buf()];
        v.extend(records.iter().map(|r| Manifest::resolve(base, r)));
        v
    }

    /// Layer thresholds from every training-split clip, real and fake.
    pub fn calibrate(&self) -> Result<StageOutcome> {
        let (manifest, base) = self.manifest()?;
        let backbone = self.backbone()?;
        let train: Vec<&ManifestRecord> = manifest.split(Split::Train).collect();
        let traces = self.traces(&backbone, &base, &train, None)?;
        let th = calibrate_thresholds(&traces)?;
        write_atomic(&self.paths.thresholds(), th.to_text().as_bytes())?;
        let mut inputs = vec![self.paths.backbone()];
        inputs.extend(self.record_paths(&base, &train, &self.paths.manifest()));
        let mut notes = serde_json::Map::new();
        notes.insert("calibration_size".into(), json!(th.calibration_size));
        self.audit("calibrate", &inputs, &[self.paths.thresholds()], notes)
    }

    /// Traces and per-criterion feature tables for every manifest record.
    pub fn extract(&self) -> Result<StageOutcome> {
        let (manifest, base) = self.manifest()?;
        let backbone = self.backbone()?;
        let thresholds = self.optional_thresholds()?;
        let records: Vec<&ManifestRecord> = manifest.records.iter().collect();
        let traces = self.traces(&backbone, &base, &records, None)?;
        let row = |r: &ManifestRecord, values: Vec<f64>| TableRow {
            path: r.path.clone(),
            label: r.label,
            split: r.split,
            values,
        };
        let trace_columns: Vec<String> = traces
            .first()
            .map(|t| t.layers.iter().flat_map(|l| (0..l.values.len()).map(move |i| format!("{}_n{i}", l.id))).collect())
            .unwrap_or_default();
        let trace_table = FeatureTable {
            columns: trace_columns,
            rows: records.iter().zip(&traces).map(|(r, t)| row(r, t.flat())).collect(),
        };
        trace_table.write(&self.paths.traces(), true)?;
        let mut outputs = vec![self.paths.traces()];
        for &c in &self.config.criteria {
            let feats = self.features(&traces, c, thresholds.as_ref())?;
            let table = FeatureTable {
                columns: feats.first().map(|f| f.column_names(c)).unwrap_or_default(),
                rows: records.iter().zip(feats).map(|(r, f)| row(r, f.values)).collect(),
            };
            table.write(&self.paths.features(c), true)?;
            outputs.push(self.paths.features(c));
        }
        let mut inputs = vec![self.paths.backbone()];
        if thresholds.is_some() {
            inputs.push(self.paths.thresholds());
        }
        inputs.extend(self.record_paths(&base, &records, &self.paths.manifest()));
        self.audit("extract", &inputs, &outputs, serde_json::Map::new())
    }

    fn feature_table(&self, c: Criterion) -> Result<FeatureTable> {
        require(&self.paths.features(c), "extract")?;
        FeatureTable::read(&self.paths.features(c))
    }

    pub fn train_detector(&self) -> Result<StageOutcome> {
        let mut outputs = Vec::new();
        let mut inputs = Vec::new();
        let mut notes = serde_json::Map::new();
        for (i, &c) in self.config.criteria.iter().enumerate() {
            let table = self.feature_table(c)?;
            let train: Vec<(Vec<f64>, Label)> =
                table.rows.iter().filter(|r| r.split == Split::Train).map(|r| (r.values.clone(), r.label)).collect();
            let sgd = self.config.detector.train().sgd(derive_seed(self.config.seed, 2 + i as u64));
            let (model, log) = train_detector(&train, c, self.config.coverage.k, self.config.detector.hidden, &sgd)?;
            model.save(self.paths.detector(c))?;
            write_atomic(&self.paths.detector_log(c), epoch_log(&log).as_bytes())?;
            let val: Vec<(Vec<f64>, Label)> =
                table.rows.iter().filter(|r| r.split == Split::Val).map(|r| (r.values.clone(), r.label)).collect();
            if !val.is_empty() {
                if let Ok(r) = self.report(c, &model, &val, None) {
                    log::info!("{c} detector validation AUC {:.4}", r.auc);
                    notes.insert(format!("{c}_val_auc"), json!(r.auc));
                }
            }
            notes.insert(format!("{c}_final_loss"), json!(log.last().map(|e| e.loss)));
            inputs.push(self.paths.features(c));
            outputs.extend([self.paths.detector(c), self.paths.detector_log(c)]);
        }
        self.audit("train-detector", &inputs, &outputs, notes)
    }

    /// Test-split report per criterion. Without a manipulation the stored
    /// feature tables are scored; with one, the audio path is rerun.
    pub fn eval(&self, manipulation: Option<&Manipulation>) -> Result<(Vec<EvalReport>, StageOutcome)> {
        let mut inputs = Vec::new();
        let reports = match manipulation {
            None => {
                let (manifest, _) = self.manifest()?;
                let test: std::collections::HashSet<&str> =
                    self.test_records(&manifest).iter().map(|r| r.path.as_str()).collect();
                let mut reports = Vec::new();
                for &c in &self.config.criteria {
                    let model = self.detector(c)?;
                    let table = self.feature_table(c)?;
                    let rows: Vec<(Vec<f64>, Label)> = table
                        .rows
                        .iter()
                        .filter(|r| test.contains(r.path.as_str()))
                        .map(|r| (r.values.clone(), r.label))
                        .collect();
                    reports.push(self.report(c, &model, &rows, None)?);
                    inputs.extend([self.paths.detector(c), self.paths.features(c)]);
                }
                reports
            }
            Some(m) => {
                let bank = self.noise_bank()?;
                inputs.push(self.paths.backbone());
                for &c in &self.config.criteria {
                    inputs.push(self.paths.detector(c));
                }
                self.evaluate_condition(Some(m), &bank)?
            }
        };
        let stem = match manipulation {
            None => "eval".to_string(),
            Some(m) => format!("eval_{}", m.to_string().replace([':', '@'], "_")),
        };
        let csv_path = self.paths.reports().join(format!("{stem}.csv"));
        let json_path = self.paths.reports().join(format!("{stem}.json"));
        write_atomic(&csv_path, reports_csv(&reports).as_bytes())?;
        write_json(&json_path, &reports)?;
        let outcome = self.audit("eval", &inputs, &[csv_path, json_path], serde_json::Map::new())?;
        Ok((reports, outcome))
    }

    /// Label/split-prefixed copies of the trace and feature tables.
    pub fn export_features(&self) -> Result<StageOutcome> {
        require(&self.paths.traces(), "extract")?;
        let mut outputs = Vec::new();
        let mut inputs = vec![self.paths.traces()];
        let traces = FeatureTable::read(&self.paths.traces())?;
        let out = self.paths.export().join("traces.csv");
        traces.write(&out, false)?;
        outputs.push(out);
        for &c in &self.config.criteria {
            let t = self.feature_table(c)?;
            let out = self.paths.export().join(format!("features_{c}.csv"));
            t.write(&out, false)?;
            inputs.push(self.paths.features(c));
            outputs.push(out);
        }
        self.audit("export-features", &inputs, &outputs, serde_json::Map::new())
    }
}

pub(crate) fn reports_csv(reports: &[EvalReport]) -> String {
    let mut s = format!("{REPORT_HEADER}\n");
    for r in reports {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

fn epoch_log(log: &[EpochStats]) -> String {
    let mut s = String::from("epoch,running_loss,loss,accuracy\n");
    for e in log {
        s.push_str(&format!("{},{:?},{:?},{:?}\n", e.epoch, e.running_loss, e.loss, e.accuracy));
    }
    s
}
