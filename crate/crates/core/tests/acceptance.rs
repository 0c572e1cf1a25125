//! Acceptance suite: one PASS/FAIL line per criterion.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voxtrace::audio::{load_wav, save_wav, FeatureMap, LogMelConfig, WavDepth, Waveform};
use voxtrace::backbone::{self, ActivationTrace, LayerTrace, NetworkSpec};
use voxtrace::corpus::{load_manifest, write_manifest, Manifest, ManifestRecord, Split};
use voxtrace::coverage::{acn_features, calibrate_thresholds, tkan_features, Criterion};
use voxtrace::detector::{self, DetectorModel, DetectorSpec, Standardizer};
use voxtrace::manipulate::{mix_noise, pitch_shift, resample, time_stretch, Manipulation, NoiseBank, SnrFormula};
use voxtrace::metrics::{average_precision, eer, roc_auc, EvalReport, Label, ScoredSet};
use voxtrace::nn::LayerSpec;
use voxtrace::nsw::{Tensor, WeightStore};
use voxtrace::pipeline::{ExperimentConfig, Pipeline};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn random_trace(rng: &mut ChaCha8Rng, widths: &[usize]) -> ActivationTrace {
    ActivationTrace {
        layers: widths
            .iter()
            .enumerate()
            .map(|(i, &w)| LayerTrace {
                id: format!("layer{i}"),
                // coarse grid so ties and exact-threshold hits occur
                values: (0..w).map(|_| (rng.gen_range(0..40) as f64) * 0.25).collect(),
            })
            .collect(),
    }
}

fn coverage_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..50 {
        let widths: Vec<usize> = (0..rng.gen_range(1..5)).map(|_| rng.gen_range(5..12)).collect();
        let traces: Vec<ActivationTrace> = (0..rng.gen_range(1..8)).map(|_| random_trace(&mut rng, &widths)).collect();
        let th = calibrate_thresholds(&traces).map_err(|e| e.to_string())?;
        for (l, &w) in widths.iter().enumerate() {
            // per-input means, then mean of means (equal widths make it the grand mean)
            let per_input: Vec<f64> = traces.iter().map(|t| t.layers[l].values.iter().sum::<f64>() / w as f64).collect();
            let expect = per_input.iter().sum::<f64>() / per_input.len() as f64;
            let got = th.layers[l].1;
            ensure!((got - expect).abs() <= 1e-9 * expect.abs().max(1e-12), "case {case} layer {l}: threshold {got} vs {expect}");
        }
        let k = rng.gen_range(1..=5);
        for t in &traces {
            let acn = acn_features(t, &th).map_err(|e| e.to_string())?;
            let tkan = tkan_features(t, k).map_err(|e| e.to_string())?;
            for (l, layer) in t.layers.iter().enumerate() {
                let mut count = 0;
                for &v in &layer.values {
                    if v > th.layers[l].1 {
                        count += 1;
                    }
                }
                ensure!(acn.values[l] == count as f64, "case {case}: ACN layer {l} {} vs {count}", acn.values[l]);
                // selection by repeated maximum
                let mut left = layer.values.clone();
                for r in 0..k {
                    let (i, &m) = left.iter().enumerate().fold((0, &f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
                    ensure!(tkan.values[l * k + r] == m, "case {case}: TKAN layer {l} rank {r}");
                    left.remove(i);
                }
            }
        }
    }
    Ok("50 trace sets".into())
}

fn gradient_checks() -> Check {
    use LayerSpec::*;
    let spec = NetworkSpec {
        frames: 10,
        mel_bins: 9,
        layers: vec![
            Conv2d { out_channels: 4, kernel: 3, stride: 1 },
            Relu,
            MaxPool { kernel: 2, stride: 2 },
            Conv2d { out_channels: 6, kernel: 2, stride: 1 },
            Relu,
            Flatten,
            FullyConnected { out_units: 12 },
            Relu,
            FullyConnected { out_units: 4 },
        ],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for seed in 0..3 {
        let w = backbone::init_weights(&spec, seed).map_err(|e| e.to_string())?;
        let params: usize = w.tensors.iter().map(|t| t.data.len()).sum();
        ensure!(params <= 5000, "backbone instance has {params} parameters");
        let x: Vec<f32> = (0..90).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let map = FeatureMap { frames: 10, bins: 9, values: x, config: LogMelConfig::default() };
        let r = backbone::gradient_check(&spec, &w, &map, seed as usize % 4).map_err(|e| e.to_string())?;
        ensure!(r.max_relative_error < 1e-4, "backbone seed {seed}: {r:?}");
        worst = worst.max(r.max_relative_error);
    }
    for seed in 0..3 {
        let spec = DetectorSpec { input_width: 7, hidden: [16, 12, 8, 6] };
        let rows: Vec<Vec<f64>> = (0..10).map(|_| (0..7).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let std = Standardizer::fit(&refs).map_err(|e| e.to_string())?;
        let params = detector::init_params(&spec, seed).map_err(|e| e.to_string())?;
        let n: usize = params.iter().map(|p| p.weight.len() + p.bias.len()).sum();
        ensure!(n <= 5000, "detector instance has {n} parameters");
        let model = DetectorModel::new(spec, Criterion::Tkan, 5, std, params).map_err(|e| e.to_string())?;
        let label = if seed % 2 == 0 { Label::Fake } else { Label::Real };
        let r = detector::gradient_check(&model, &rows[0], label).map_err(|e| e.to_string())?;
        ensure!(r.max_relative_error < 1e-4, "detector seed {seed}: {r:?}");
        worst = worst.max(r.max_relative_error);
    }
    Ok(format!("max relative error {worst:.2e}"))
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

fn snr_exactness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let targets = [25.0, 30.0, 35.0, 40.0, 45.0];
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let n = rng.gen_range(2000..6000);
        let amp = rng.gen_range(0.05..0.3);
        let f0 = rng.gen_range(80.0..600.0);
        let signal: Vec<f32> = (0..n)
            .map(|t| (amp * (2.0 * std::f64::consts::PI * f0 * t as f64 / 16000.0).sin() + rng.gen_range(-0.01..0.01)) as f32)
            .collect();
        let noise: Vec<f32> = (0..rng.gen_range(500..8000)).map(|_| rng.gen_range(-0.5f32..0.5)).collect();
        let target = targets[i % 5];
        let s = Waveform::new(signal, 16000).map_err(|e| e.to_string())?;
        let nz = Waveform::new(noise, 16000).map_err(|e| e.to_string())?;
        let mixed = mix_noise(&s, &nz, target, SnrFormula::SquaredRatio).map_err(|e| e.to_string())?;
        let sig: Vec<f64> = s.samples().iter().map(|&v| v as f64).collect();
        let added: Vec<f64> = mixed.samples().iter().zip(&sig).map(|(&m, &s)| m as f64 - s).collect();
        let measured = 40.0 * (rms(&sig) / rms(&added)).log10();
        worst = worst.max((measured - target).abs());
        ensure!((measured - target).abs() <= 0.01, "triple {i}: {measured} dB for target {target}");
    }
    Ok(format!("max deviation {worst:.2e} dB"))
}

/// Strongest frequency between `lo` and `hi`, scanned in 0.25 Hz steps.
fn peak_frequency(x: &[f32], sr: f64, lo: f64, hi: f64) -> f64 {
    let n = x.len();
    let win: Vec<f64> = (0..n).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()).collect();
    let mut best = (lo, 0.0);
    let mut f = lo;
    while f <= hi {
        let w = 2.0 * std::f64::consts::PI * f / sr;
        let (mut re, mut im) = (0.0, 0.0);
        for (i, (&v, &h)) in x.iter().zip(&win).enumerate() {
            re += v as f64 * h * (w * i as f64).cos();
            im -= v as f64 * h * (w * i as f64).sin();
        }
        let p = re * re + im * im;
        if p > best.1 {
            best = (f, p);
        }
        f += 0.25;
    }
    best.0
}

fn dsp_sanity() -> Check {
    let sr = 16000;
    let tone: Vec<f32> = (0..sr).map(|t| (0.5 * (2.0 * std::f64::consts::PI * 440.0 * t as f64 / sr as f64).sin()) as f32).collect();
    let w = Waveform::new(tone, sr as u32).map_err(|e| e.to_string())?;
    let up = pitch_shift(&w, 12).map_err(|e| e.to_string())?;
    let mid = &up.samples()[4000..12000];
    let f = peak_frequency(mid, sr as f64, 600.0, 1200.0);
    ensure!((f - 880.0).abs() <= 10.0, "pitch +12 peak at {f} Hz");
    let slow = time_stretch(&w, 0.5).map_err(|e| e.to_string())?;
    let diff = slow.len() as i64 - 2 * w.len() as i64;
    ensure!(diff.unsigned_abs() <= 512, "stretch 0.5 gave {} samples for {}", slow.len(), w.len());
    let bank = NoiseBank::synthetic(16000, 1.0, 0).map_err(|e| e.to_string())?;
    for m in [Manipulation::Resample { offset_hz: 0 }, Manipulation::Speed { rate: 1.0 }, Manipulation::Pitch { n_steps: 0 }] {
        let out = m.apply(&w, &bank, SnrFormula::SquaredRatio).map_err(|e| e.to_string())?;
        let same = out.sample_rate() == w.sample_rate()
            && out.samples().len() == w.samples().len()
            && out.samples().iter().zip(w.samples()).all(|(a, b)| a.to_bits() == b.to_bits());
        ensure!(same, "{m} is not a bit-exact no-op");
    }
    ensure!(resample(&w, 0).map_err(|e| e.to_string())? == w, "resample(0) changed the input");
    Ok(format!("pitch peak {f:.2} Hz, stretch length off by {diff}"))
}

fn mann_whitney_auc(pairs: &[(f64, Label)]) -> f64 {
    let (mut u, mut p, mut n) = (0.0, 0.0, 0.0);
    for (sf, lf) in pairs {
        if !lf.is_fake() {
            n += 1.0;
            continue;
        }
        p += 1.0;
        for (sr, lr) in pairs {
            if !lr.is_fake() {
                u += if sf > sr { 1.0 } else if sf == sr { 0.5 } else { 0.0 };
            }
        }
    }
    u / (p * n)
}

/// (FPR, FNR) when predicting fake at `score >= t`, by direct counting.
fn rates_at(pairs: &[(f64, Label)], t: f64) -> (f64, f64) {
    let pos = pairs.iter().filter(|p| p.1.is_fake()).count() as f64;
    let neg = pairs.len() as f64 - pos;
    let fp = pairs.iter().filter(|p| !p.1.is_fake() && p.0 >= t).count() as f64;
    let fneg = pairs.iter().filter(|p| p.1.is_fake() && p.0 < t).count() as f64;
    (fp / neg, fneg / pos)
}

fn grid_eer(pairs: &[(f64, Label)]) -> f64 {
    let lo = pairs.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = pairs.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let mut grid: Vec<f64> = (0..=2000).map(|i| lo - 0.5 + (hi - lo + 1.0) * i as f64 / 2000.0).collect();
    grid.extend(pairs.iter().map(|p| p.0));
    grid.sort_by(f64::total_cmp);
    let curve: Vec<(f64, f64)> = grid.iter().map(|&t| rates_at(pairs, t)).collect();
    for w in curve.windows(2) {
        let (d1, d2) = (w[0].0 - w[0].1, w[1].0 - w[1].1);
        if d1 == 0.0 {
            return w[0].0;
        }
        if d1 > 0.0 && d2 <= 0.0 {
            if d2 == 0.0 {
                return w[1].0;
            }
            return w[0].0 + d1 / (d1 - d2) * (w[1].0 - w[0].0);
        }
    }
    f64::NAN
}

fn prefix_ap(pairs: &[(f64, Label)]) -> f64 {
    let mut thresholds: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let pos = pairs.iter().filter(|p| p.1.is_fake()).count();
    let (mut ap, mut prev) = (0.0, 0.0);
    for t in thresholds {
        let tp = pairs.iter().filter(|p| p.1.is_fake() && p.0 >= t).count();
        let all = pairs.iter().filter(|p| p.0 >= t).count();
        let recall = tp as f64 / pos as f64;
        ap += (recall - prev) * (tp as f64 / all as f64);
        prev = recall;
    }
    ap
}

fn metric_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut done = 0;
    while done < 200 {
        let n = rng.gen_range(2..=10);
        let pairs: Vec<(f64, Label)> = (0..n)
            .map(|_| ((rng.gen_range(0..6) as f64) / 5.0, if rng.gen_bool(0.5) { Label::Fake } else { Label::Real }))
            .collect();
        if pairs.iter().all(|p| p.1.is_fake()) || pairs.iter().all(|p| !p.1.is_fake()) {
            continue;
        }
        let s = ScoredSet::new(pairs.clone());
        let auc = roc_auc(&s).map_err(|e| e.to_string())?;
        let mw = mann_whitney_auc(&pairs);
        ensure!((auc - mw).abs() <= 1e-12, "set {done}: AUC {auc} vs U {mw} on {pairs:?}");
        let e = eer(&s).map_err(|e| e.to_string())?;
        let g = grid_eer(&pairs);
        ensure!((e - g).abs() <= 1e-9, "set {done}: EER {e} vs grid {g} on {pairs:?}");
        let ap = average_precision(&s).map_err(|e| e.to_string())?;
        ensure!(ap == prefix_ap(&pairs), "set {done}: AP {ap} vs {} on {pairs:?}", prefix_ap(&pairs));
        done += 1;
    }
    Ok("200 score sets".into())
}

fn report<'a>(reports: &'a [EvalReport], c: &str) -> Result<&'a EvalReport, String> {
    reports.iter().find(|r| r.criterion == c).ok_or_else(|| format!("no {c} report"))
}

fn end_to_end(dir: &Path) -> Check {
    let start = Instant::now();
    let cfg = ExperimentConfig { out_dir: dir.to_path_buf(), ..ExperimentConfig::default() };
    ensure!(cfg.seed == 42 && cfg.corpus.num_speakers == 8 && cfg.corpus.clips_per_speaker == 40, "unexpected defaults");
    let p = Pipeline::new(cfg, 0).map_err(|e| e.to_string())?;
    let run = || -> voxtrace::Result<Vec<EvalReport>> {
        p.gen_data()?;
        p.train_backbone()?;
        p.calibrate()?;
        p.extract()?;
        p.train_detector()?;
        Ok(p.eval(None)?.0)
    };
    let reports = run().map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let acn = report(&reports, "acn")?.auc;
    let tkan = report(&reports, "tkan")?.auc;
    let detail = format!("TKAN AUC {tkan:.4}, ACN AUC {acn:.4}, {secs:.0} s");
    ensure!(tkan >= 0.95, "{detail}: TKAN below 0.95");
    ensure!(acn >= 0.85, "{detail}: ACN below 0.85");
    ensure!(tkan > acn, "{detail}: TKAN does not beat ACN");
    ensure!(secs <= 600.0, "{detail}: over 10 minutes");
    Ok(detail)
}

fn sweep_identity(dir: &Path) -> Check {
    let cfg = ExperimentConfig { out_dir: dir.to_path_buf(), ..ExperimentConfig::default() };
    let p = Pipeline::new(cfg, 0).map_err(|e| e.to_string())?;
    let out = p.sweep().map_err(|e| e.to_string())?;
    let manipulated = out.cells.iter().filter(|c| c.manipulation.is_some()).count();
    ensure!(manipulated == 75, "{manipulated} manipulated cells");
    ensure!(out.failed() == 0, "{} cells failed", out.failed());
    let mut kinds = BTreeMap::new();
    for c in out.cells.iter().filter_map(|c| c.manipulation.as_ref()) {
        *kinds.entry(c.label().0.split(':').next().unwrap_or_default().to_string()).or_insert(0) += 1;
    }
    ensure!(kinds.get("noise") == Some(&60), "noise cells {kinds:?}");
    let baseline = &out.cells.iter().find(|c| c.manipulation.is_none()).ok_or("no baseline cell")?.reports;
    let mut checked = 0;
    for cell in out.cells.iter().filter(|c| c.manipulation.as_ref().is_some_and(|m| m.is_identity())) {
        for (a, b) in cell.reports.iter().zip(baseline) {
            for ((name, x), (_, y)) in a.metric_values().iter().zip(b.metric_values()) {
                ensure!((x - y).abs() <= 1e-12, "{} {name}: {x} vs baseline {y}", a.manipulation);
            }
            checked += 1;
        }
    }
    ensure!(checked == 6, "{checked} identity reports compared");
    Ok(format!("{} cells, 3 identity cells match baseline", out.cells.len()))
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn small_config(dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig { out_dir: dir.to_path_buf(), seed: 7, ..ExperimentConfig::default() };
    cfg.corpus.num_speakers = 3;
    cfg.corpus.clips_per_speaker = 10;
    cfg.corpus.clip_seconds = 1.0;
    cfg.backbone.epochs = 2;
    cfg.detector.epochs = 5;
    cfg.coverage.k = 3;
    cfg.sweep.max_per_class = Some(2);
    cfg.sweep.noise_seconds = 1.0;
    cfg
}

fn determinism(root: &Path) -> Check {
    let mut snapshots = Vec::new();
    for (i, jobs) in [1usize, 3].into_iter().enumerate() {
        let dir = root.join(format!("run{i}"));
        let p = Pipeline::new(small_config(&dir), jobs).map_err(|e| e.to_string())?;
        let run = || -> voxtrace::Result<()> {
            p.gen_data()?;
            p.train_backbone()?;
            p.calibrate()?;
            p.extract()?;
            p.train_detector()?;
            p.eval(None)?;
            p.eval(Some(&"pitch:2".parse()?))?;
            p.sweep()?;
            p.export_features()?;
            Ok(())
        };
        run().map_err(|e| e.to_string())?;
        snapshots.push(files(&dir));
    }
    let (a, b) = (&snapshots[0], &snapshots[1]);
    ensure!(a.keys().eq(b.keys()), "different artifact sets");
    for (k, v) in a {
        ensure!(&b[k] == v, "{} differs between --jobs 1 and 3", k.display());
    }
    Ok(format!("{} artifacts identical across worker counts", a.len()))
}

fn round_trips(dir: &Path) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = WeightStore::default();
    for i in 0..4 {
        let dims = vec![rng.gen_range(1..6), rng.gen_range(1..6)];
        let mut data: Vec<f32> = (0..dims[0] * dims[1]).map(|_| f32::from_bits(rng.gen::<u32>() & 0x7f7f_ffff)).collect();
        data[0] = -0.0;
        store.tensors.push(Tensor::new(format!("t{i}"), dims, data).map_err(|e| e.to_string())?);
    }
    let back = WeightStore::from_bytes(&store.to_bytes()).map_err(|e| e.to_string())?;
    ensure!(back.tensors.len() == store.tensors.len(), "tensor count changed");
    for (a, b) in store.tensors.iter().zip(&back.tensors) {
        ensure!(a.name == b.name && a.dims == b.dims && a.bits() == b.bits(), "tensor {} changed", a.name);
    }

    let pcm: Vec<f32> = (0..3000).map(|_| rng.gen_range(-32768i32..32768) as f32 / 32768.0).collect();
    let w = Waveform::new(pcm, 22050).map_err(|e| e.to_string())?;
    let (p1, p2) = (dir.join("a.wav"), dir.join("b.wav"));
    save_wav(&w, &p1, WavDepth::Pcm16).map_err(|e| e.to_string())?;
    let back = load_wav(&p1).map_err(|e| e.to_string())?;
    ensure!(back.sample_rate() == 22050, "sample rate changed");
    ensure!(back.samples().iter().zip(w.samples()).all(|(a, b)| a.to_bits() == b.to_bits()), "PCM16 samples changed");
    save_wav(&back, &p2, WavDepth::Pcm16).map_err(|e| e.to_string())?;
    ensure!(std::fs::read(&p1).unwrap() == std::fs::read(&p2).unwrap(), "re-encoded WAV differs");

    let records: Vec<ManifestRecord> = (0..30)
        .map(|i| ManifestRecord {
            path: format!("clips/x {i}.wav"),
            label: if i % 3 == 0 { Label::Fake } else { Label::Real },
            speaker_id: i % 4,
            split: [Split::Train, Split::Val, Split::Test][i % 3],
        })
        .collect();
    let m = Manifest { records };
    let mp = dir.join("m.tsv");
    write_manifest(&m, &mp).map_err(|e| e.to_string())?;
    ensure!(load_manifest(&mp).map_err(|e| e.to_string())? == m, "manifest changed");
    Ok("NSW1, PCM16 WAV and manifest".into())
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let e2e = tmp.path().join("e2e");
    let criteria: Vec<(&str, Box<dyn Fn() -> Check>)> = vec![
        ("coverage oracles", Box::new(coverage_oracles)),
        ("gradient checks", Box::new(gradient_checks)),
        ("SNR exactness", Box::new(snr_exactness)),
        ("DSP sanity", Box::new(dsp_sanity)),
        ("metric oracles", Box::new(metric_oracles)),
        ("end-to-end synthetic experiment", Box::new(|| end_to_end(&e2e))),
        ("sweep completeness and identity", Box::new(|| sweep_identity(&e2e))),
        ("determinism", Box::new(|| determinism(&tmp.path().join("det")))),
        ("format round-trips", Box::new(|| round_trips(tmp.path()))),
    ];
    let limits = [5.0, 60.0, f64::INFINITY, f64::INFINITY, f64::INFINITY, f64::INFINITY, f64::INFINITY, f64::INFINITY, f64::INFINITY];
    let mut failed = 0;
    for (i, ((name, check), limit)) in criteria.iter().zip(limits).enumerate() {
        let start = Instant::now();
        let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(check))
            .unwrap_or_else(|_| Err("panicked".to_string()));
        let secs = start.elapsed().as_secs_f64();
        let result = match result {
            Ok(_) if secs > limit => Err(format!("took {secs:.1} s, limit {limit} s")),
            r => r,
        };
        match result {
            Ok(detail) => println!("criterion {}: PASS {name} ({detail}; {secs:.1} s)", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL {name} ({why}; {secs:.1} s)", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
