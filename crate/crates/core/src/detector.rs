//! Shallow fully-connected real/fake classifier over coverage features.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coverage::Criterion;
use crate::error::{Error, Result};
use crate::metrics::Label;
use crate::nn::{self, EpochStats, GradCheckReport, LayerSpec, Loss, Param, SgdConfig, Shape, Target, Topology};
use crate::nsw::{Tensor, WeightStore};
use crate::util::derive_seed;

pub const DEFAULT_HIDDEN: [usize; 4] = [256, 128, 64, 32];
pub const DECISION_THRESHOLD: f64 = 0.5;
const STD_FLOOR: f64 = 1e-8;

/// Four ReLU hidden layers and one sigmoid output unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectorSpec {
    pub input_width: usize,
    pub hidden: [usize; 4],
}

impl DetectorSpec {
    pub fn new(input_width: usize) -> Self {
        DetectorSpec { input_width, hidden: DEFAULT_HIDDEN }
    }

    pub fn topology(&self) -> Result<Topology> {
        if self.input_width == 0 || self.hidden.contains(&0) {
            return Err(Error::arg("detector layer widths must be positive"));
        }
        let mut layers = Vec::with_capacity(9);
        for &h in &self.hidden {
            layers.push(LayerSpec::FullyConnected { out_units: h });
            layers.push(LayerSpec::Relu);
        }
        layers.push(LayerSpec::FullyConnected { out_units: 1 });
        Topology::new(Shape::flat(self.input_width), layers)
    }

    fn tensor_names() -> Vec<String> {
        (0..5).flat_map(|i| [format!("fc{i}.weight"), format!("fc{i}.bias")]).collect()
    }
}

/// Detector defaults: SGD, momentum 0.9, lr 1e-2 with 1e-6 inverse-time
/// decay, 100 epochs of batch 32.
pub fn default_train_config(seed: u64) -> SgdConfig {
    SgdConfig { learning_rate: 1e-2, momentum: 0.9, decay: 1e-6, epochs: 100, batch_size: 32, seed }
}

/// Per-dimension z-scoring fitted on the training split.
///
/// Statistics are rounded to `f32` when fitted so that a model reloaded from
/// disk standardizes exactly as the in-memory one did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[&[f64]]) -> Result<Self> {
        let width = check_widths(rows)?;
        let n = rows.len() as f64;
        let mut mean = vec![0.0; width];
        for r in rows {
            for (m, &v) in mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; width];
        for r in rows {
            for ((s, &m), &v) in var.iter_mut().zip(&mean).zip(r.iter()) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.iter().map(|s| round_f32((s / n).sqrt()).max(STD_FLOOR)).collect();
        Ok(Standardizer { mean: mean.into_iter().map(round_f32).collect(), std })
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.width() {
            return Err(Error::arg(format!("feature width {} does not match {}", x.len(), self.width())));
        }
        Ok(x.iter().zip(&self.mean).zip(&self.std).map(|((&v, &m), &s)| (v - m) / s).collect())
    }
}

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

fn check_widths(rows: &[&[f64]]) -> Result<usize> {
    let width = rows.first().map(|r| r.len()).ok_or_else(|| Error::arg("no feature vectors"))?;
    if width == 0 {
        return Err(Error::arg("feature vectors are empty"));
    }
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != width) {
        return Err(Error::arg(format!("feature vector {i} has width {}, expected {width}", r.len())));
    }
    Ok(width)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub score: f64,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    pub spec: DetectorSpec,
    pub criterion: Criterion,
    pub k: usize,
    pub standardizer: Standardizer,
    pub params: Vec<Param<f32>>,
    topology: Topology,
}

impl DetectorModel {
    pub fn new(
        spec: DetectorSpec,
        criterion: Criterion,
        k: usize,
        standardizer: Standardizer,
        params: Vec<Param<f32>>,
    ) -> Result<Self> {
        let topology = spec.topology()?;
        topology.check_params(&params)?;
        if standardizer.width() != spec.input_width || standardizer.std.len() != spec.input_width {
            return Err(Error::arg("standardizer width does not match the detector input"));
        }
        Ok(DetectorModel { spec, criterion, k, standardizer, params, topology })
    }

    /// Fake-class probability for a raw (unstandardized) feature vector.
    pub fn score(&self, features: &[f64]) -> Result<f64> {
        let x: Vec<f32> = self.standardizer.apply(features)?.into_iter().map(|v| v as f32).collect();
        let acts = self.topology.forward(&self.params, &x)?;
        Ok(nn::sigmoid(acts.last().unwrap()[0] as f64))
    }

    pub fn predict(&self, features: &[f64]) -> Result<Prediction> {
        let score = self.score(features)?;
        let label = if score >= DECISION_THRESHOLD { Label::Fake } else { Label::Real };
        Ok(Prediction { score, label })
    }

    pub fn to_store(&self) -> WeightStore {
        let mut tensors = vec![
            Tensor { name: "header.criterion".into(), dims: vec![1], data: vec![criterion_code(self.criterion)] },
            Tensor { name: "header.k".into(), dims: vec![1], data: vec![self.k as f32] },
            Tensor {
                name: "standardize.mean".into(),
                dims: vec![self.spec.input_width],
                data: self.standardizer.mean.iter().map(|&v| v as f32).collect(),
            },
            Tensor {
                name: "standardize.std".into(),
                dims: vec![self.spec.input_width],
                data: self.standardizer.std.iter().map(|&v| v as f32).collect(),
            },
        ];
        let names = DetectorSpec::tensor_names();
        for ((_, wd, bd), (p, n)) in self.topology.param_dims().into_iter().zip(self.params.iter().zip(names.chunks(2))) {
            tensors.push(Tensor { name: n[0].clone(), dims: wd, data: p.weight.clone() });
            tensors.push(Tensor { name: n[1].clone(), dims: bd, data: p.bias.clone() });
        }
        WeightStore { tensors }
    }

    pub fn from_store(store: &WeightStore) -> Result<Self> {
        let get = |name: &str| {
            store.get(name).ok_or_else(|| Error::format(format!("detector file lacks tensor `{name}`")))
        };
        let criterion = match get("header.criterion")?.data.first() {
            Some(0.0) => Criterion::Acn,
            Some(1.0) => Criterion::Tkan,
            _ => return Err(Error::format("unknown criterion code in detector header")),
        };
        let k = match get("header.k")?.data.first() {
            Some(&v) if v >= 0.0 && v.fract() == 0.0 => v as usize,
            _ => return Err(Error::format("bad k in detector header")),
        };
        let mean: Vec<f64> = get("standardize.mean")?.data.iter().map(|&v| v as f64).collect();
        let std: Vec<f64> = get("standardize.std")?.data.iter().map(|&v| v as f64).collect();
        let names = DetectorSpec::tensor_names();
        let w0 = get(&names[0])?;
        if w0.dims.len() != 2 {
            return Err(Error::format("fc0.weight must be two-dimensional"));
        }
        let mut hidden = [0usize; 4];
        for (i, h) in hidden.iter_mut().enumerate() {
            *h = get(&names[2 * i + 1])?.data.len();
        }
        let spec = DetectorSpec { input_width: w0.dims[1], hidden };
        let topology = spec.topology()?;
        let mut params = Vec::with_capacity(5);
        for ((_, wd, bd), n) in topology.param_dims().into_iter().zip(names.chunks(2)) {
            let w = get(&n[0])?;
            let b = get(&n[1])?;
            if w.dims != wd || b.dims != bd {
                return Err(Error::Shape {
                    layer: n[0].clone(),
                    msg: format!("stored {:?}/{:?}, expected {wd:?}/{bd:?}", w.dims, b.dims),
                });
            }
            params.push(Param { weight: w.data.clone(), bias: b.data.clone() });
        }
        DetectorModel::new(spec, criterion, k, Standardizer { mean, std }, params)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        crate::nsw::save_weights(&self.to_store(), path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_store(&crate::nsw::load_weights(path)?)
    }
}

fn criterion_code(c: Criterion) -> f32 {
    match c {
        Criterion::Acn => 0.0,
        Criterion::Tkan => 1.0,
    }
}

fn target(label: Label) -> Target {
    Target::Binary(if label.is_fake() { 1.0 } else { 0.0 })
}

/// Seeded Glorot initialization of a detector.
pub fn init_params(spec: &DetectorSpec, seed: u64) -> Result<Vec<Param<f32>>> {
    let topo = spec.topology()?;
    Ok(topo.init_params(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xde7))))
}

/// Fits standardization on `samples`, then trains with sigmoid
/// binary cross-entropy.
pub fn train_detector(
    samples: &[(Vec<f64>, Label)],
    criterion: Criterion,
    k: usize,
    hidden: [usize; 4],
    config: &SgdConfig,
) -> Result<(DetectorModel, Vec<EpochStats>)> {
    let rows: Vec<&[f64]> = samples.iter().map(|(x, _)| x.as_slice()).collect();
    let width = check_widths(&rows)?;
    if !samples.iter().any(|(_, l)| l.is_fake()) || samples.iter().all(|(_, l)| l.is_fake()) {
        return Err(Error::arg("detector training needs both real and fake samples"));
    }
    let standardizer = Standardizer::fit(&rows)?;
    let spec = DetectorSpec { input_width: width, hidden };
    let topo = spec.topology()?;
    let mut params = init_params(&spec, config.seed)?;
    let inputs: Vec<Vec<f32>> = rows
        .iter()
        .map(|r| Ok(standardizer.apply(r)?.into_iter().map(|v| v as f32).collect()))
        .collect::<Result<_>>()?;
    let input_refs: Vec<&[f32]> = inputs.iter().map(|v| v.as_slice()).collect();
    let targets: Vec<Target> = samples.iter().map(|(_, l)| target(*l)).collect();
    let log = nn::train(&topo, &mut params, &input_refs, &targets, Loss::SigmoidBinaryCrossEntropy, config)?;
    Ok((DetectorModel::new(spec, criterion, k, standardizer, params)?, log))
}

/// Central-difference check of the detector's parameter gradients on one
/// standardized input.
pub fn gradient_check(model: &DetectorModel, features: &[f64], label: Label) -> Result<GradCheckReport> {
    let x = model.standardizer.apply(features)?;
    let params: Vec<Param<f64>> = nn::cast_params(&model.params);
    nn::gradient_check(&model.topology, &params, &x, target(label), Loss::SigmoidBinaryCrossEntropy)
}
