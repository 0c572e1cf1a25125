//! Instrumented convolutional speaker-embedding network.
//!
//! Every convolutional and fully-connected layer is monitored. A conv layer
//! contributes one neuron per output channel, valued at the spatial mean of
//! that channel's post-ReLU map; a fully-connected layer contributes one
//! neuron per unit. The final (logit) layer has no ReLU and is recorded as is.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::FeatureMap;
use crate::error::{Error, Result};
use crate::nn::{self, EpochStats, GradCheckReport, LayerSpec, Loss, Param, SgdConfig, Shape, Target, Topology};
use crate::nsw::{Tensor, WeightStore};
use crate::util::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Input frames (height).
    pub frames: usize,
    /// Input mel bins (width).
    pub mel_bins: usize,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    FullyConnected,
}

/// A monitored layer and where its trace values come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MonitoredLayer {
    pub id: String,
    pub kind: LayerKind,
    /// Index of the conv/fc layer in `NetworkSpec::layers`.
    pub layer_index: usize,
    /// Index into the forward activations holding the recorded tensor.
    pub act_index: usize,
    pub width: usize,
}

impl NetworkSpec {
    /// conv(16,3,s2)-relu-maxpool(2)-conv(32,3,s2)-relu-conv(64,3,s2)-relu-
    /// flatten-fc(128)-relu-fc(64)-relu-fc(num_speakers).
    pub fn reference(frames: usize, mel_bins: usize, num_speakers: usize) -> Self {
        use LayerSpec::*;
        NetworkSpec {
            frames,
            mel_bins,
            layers: vec![
                Conv2d { out_channels: 16, kernel: 3, stride: 2 },
                Relu,
                MaxPool { kernel: 2, stride: 2 },
                Conv2d { out_channels: 32, kernel: 3, stride: 2 },
                Relu,
                Conv2d { out_channels: 64, kernel: 3, stride: 2 },
                Relu,
                Flatten,
                FullyConnected { out_units: 128 },
                Relu,
                FullyConnected { out_units: 64 },
                Relu,
                FullyConnected { out_units: num_speakers },
            ],
        }
    }

    pub fn input_shape(&self) -> Shape {
        Shape::new(1, self.frames, self.mel_bins)
    }

    pub fn topology(&self) -> Result<Topology> {
        let has_conv = self.layers.iter().any(|l| matches!(l, LayerSpec::Conv2d { .. }));
        let has_fc = self.layers.iter().any(|l| matches!(l, LayerSpec::FullyConnected { .. }));
        if !has_conv || !has_fc {
            return Err(Error::arg("network needs at least one conv and one fully-connected layer"));
        }
        Topology::new(self.input_shape(), self.layers.clone())
    }

    pub fn num_classes(&self) -> Result<usize> {
        Ok(self.topology()?.output().len())
    }

    /// Monitored layers in network order (pooling, ReLU and flatten excluded).
    pub fn monitored_layers(&self) -> Result<Vec<MonitoredLayer>> {
        let topo = self.topology()?;
        let (mut convs, mut fcs) = (0, 0);
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            let (id, kind, width) = match *l {
                LayerSpec::Conv2d { out_channels, .. } => {
                    convs += 1;
                    (format!("conv{}", convs - 1), LayerKind::Conv, out_channels)
                }
                LayerSpec::FullyConnected { out_units } => {
                    fcs += 1;
                    (format!("fc{}", fcs - 1), LayerKind::FullyConnected, out_units)
                }
                _ => continue,
            };
            let followed_by_relu = matches!(self.layers.get(i + 1), Some(LayerSpec::Relu));
            let act_index = if followed_by_relu { i + 2 } else { i + 1 };
            debug_assert_eq!(topo.shapes[act_index].channels, width);
            out.push(MonitoredLayer { id, kind, layer_index: i, act_index, width });
        }
        Ok(out)
    }

    /// Tensor names in weight-file order: `<id>.weight`, `<id>.bias`.
    pub fn tensor_names(&self) -> Result<Vec<String>> {
        Ok(self
            .monitored_layers()?
            .iter()
            .flat_map(|m| [format!("{}.weight", m.id), format!("{}.bias", m.id)])
            .collect())
    }
}

/// Converts network parameters into named tensors.
pub fn params_to_store(topo: &Topology, names: &[String], params: &[Param<f32>]) -> WeightStore {
    let dims = topo.param_dims();
    let mut tensors = Vec::with_capacity(names.len());
    for (k, ((_, wd, bd), p)) in dims.iter().zip(params).enumerate() {
        tensors.push(Tensor { name: names[2 * k].clone(), dims: wd.clone(), data: p.weight.clone() });
        tensors.push(Tensor { name: names[2 * k + 1].clone(), dims: bd.clone(), data: p.bias.clone() });
    }
    WeightStore { tensors }
}

/// Validates a store against the expected tensor names and shapes and
/// unpacks it into parameters. Errors name the first offending tensor.
pub fn store_to_params(topo: &Topology, names: &[String], store: &WeightStore) -> Result<Vec<Param<f32>>> {
    let dims = topo.param_dims();
    if store.tensors.len() != names.len() {
        let offending = names
            .get(store.tensors.len())
            .or_else(|| store.tensors.get(names.len()).map(|t| &t.name))
            .cloned()
            .unwrap_or_default();
        return Err(Error::Shape {
            layer: offending,
            msg: format!("weight file has {} tensors, network expects {}", store.tensors.len(), names.len()),
        });
    }
    let mut params = Vec::with_capacity(dims.len());
    for (k, (_, wd, bd)) in dims.iter().enumerate() {
        let w = &store.tensors[2 * k];
        let b = &store.tensors[2 * k + 1];
        for (t, name, d) in [(w, &names[2 * k], wd), (b, &names[2 * k + 1], bd)] {
            if &t.name != name {
                return Err(Error::Shape { layer: name.clone(), msg: format!("found tensor `{}` in its place", t.name) });
            }
            if &t.dims != d {
                return Err(Error::Shape { layer: name.clone(), msg: format!("dims {:?}, expected {d:?}", t.dims) });
            }
        }
        params.push(Param { weight: w.data.clone(), bias: b.data.clone() });
    }
    Ok(params)
}

/// Post-activation neuron outputs of one monitored layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTrace {
    pub id: String,
    pub values: Vec<f64>,
}

/// Per-layer neuron outputs for one input.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ActivationTrace {
    pub layers: Vec<LayerTrace>,
}

impl ActivationTrace {
    pub fn layout(&self) -> Vec<(&str, usize)> {
        self.layers.iter().map(|l| (l.id.as_str(), l.values.len())).collect()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.values.iter().copied()).collect()
    }

    pub fn neuron_count(&self) -> usize {
        self.layers.iter().map(|l| l.values.len()).sum()
    }
}

/// A network description bound to validated weights.
#[derive(Debug, Clone)]
pub struct Backbone {
    spec: NetworkSpec,
    topo: Topology,
    monitored: Vec<MonitoredLayer>,
    params: Vec<Param<f32>>,
}

impl Backbone {
    pub fn new(spec: NetworkSpec, weights: &WeightStore) -> Result<Self> {
        let topo = spec.topology()?;
        let params = store_to_params(&topo, &spec.tensor_names()?, weights)?;
        let monitored = spec.monitored_layers()?;
        Ok(Backbone { spec, topo, monitored, params })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn monitored(&self) -> &[MonitoredLayer] {
        &self.monitored
    }

    pub fn weights(&self) -> WeightStore {
        params_to_store(&self.topo, &self.spec.tensor_names().unwrap(), &self.params)
    }

    /// Logits and activation trace for one input map.
    pub fn forward(&self, input: &FeatureMap) -> Result<(Vec<f32>, ActivationTrace)> {
        if input.frames != self.spec.frames || input.bins != self.spec.mel_bins {
            return Err(Error::arg(format!(
                "input is {}x{}, network expects {}x{}",
                input.frames, input.bins, self.spec.frames, self.spec.mel_bins
            )));
        }
        let acts = self.topo.forward(&self.params, &input.values)?;
        let trace = ActivationTrace {
            layers: self
                .monitored
                .iter()
                .map(|m| {
                    let t = &acts[m.act_index];
                    let values = match m.kind {
                        LayerKind::FullyConnected => t.iter().map(|&v| v as f64).collect(),
                        LayerKind::Conv => {
                            let plane = t.len() / m.width;
                            t.chunks_exact(plane)
                                .map(|ch| ch.iter().map(|&v| v as f64).sum::<f64>() / plane as f64)
                                .collect()
                        }
                    };
                    LayerTrace { id: m.id.clone(), values }
                })
                .collect(),
        };
        Ok((acts.last().unwrap().clone(), trace))
    }

    pub fn predict_class(&self, input: &FeatureMap) -> Result<usize> {
        Ok(nn::argmax(&self.forward(input)?.0))
    }
}

/// Runs `spec` with `weights` on one input.
pub fn forward(spec: &NetworkSpec, weights: &WeightStore, input: &FeatureMap) -> Result<(Vec<f32>, ActivationTrace)> {
    Backbone::new(spec.clone(), weights)?.forward(input)
}

/// Seeded Glorot initialization.
pub fn init_weights(spec: &NetworkSpec, seed: u64) -> Result<WeightStore> {
    let topo = spec.topology()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x1417));
    Ok(params_to_store(&topo, &spec.tensor_names()?, &topo.init_params(&mut rng)))
}

/// Trains the speaker classifier with softmax cross-entropy.
pub fn train_backbone(
    spec: &NetworkSpec,
    dataset: &[(FeatureMap, usize)],
    config: &SgdConfig,
) -> Result<(WeightStore, Vec<EpochStats>)> {
    let classes = spec.num_classes()?;
    let mut seen: Vec<usize> = dataset.iter().map(|(_, y)| *y).collect();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() < 2 {
        return Err(Error::arg("speaker training needs at least two classes"));
    }
    if let Some(&bad) = seen.iter().find(|&&y| y >= classes) {
        return Err(Error::arg(format!("label {bad} out of range for {classes} output units")));
    }
    let topo = spec.topology()?;
    let names = spec.tensor_names()?;
    let mut params = store_to_params(&topo, &names, &init_weights(spec, config.seed)?)?;
    let inputs: Vec<&[f32]> = dataset
        .iter()
        .map(|(m, _)| {
            if m.frames == spec.frames && m.bins == spec.mel_bins {
                Ok(m.values.as_slice())
            } else {
                Err(Error::arg(format!("training map is {}x{}, expected {}x{}", m.frames, m.bins, spec.frames, spec.mel_bins)))
            }
        })
        .collect::<Result<_>>()?;
    let targets: Vec<Target> = dataset.iter().map(|(_, y)| Target::Class(*y)).collect();
    let log = nn::train(&topo, &mut params, &inputs, &targets, Loss::SoftmaxCrossEntropy, config)?;
    Ok((params_to_store(&topo, &names, &params), log))
}

/// Compares analytic parameter gradients with central differences
/// (ε = 1e-3, all arithmetic in f64).
pub fn gradient_check(spec: &NetworkSpec, weights: &WeightStore, input: &FeatureMap, label: usize) -> Result<GradCheckReport> {
    let topo = spec.topology()?;
    let params: Vec<Param<f64>> = nn::cast_params(&store_to_params(&topo, &spec.tensor_names()?, weights)?);
    let x: Vec<f64> = input.values.iter().map(|&v| v as f64).collect();
    nn::gradient_check(&topo, &params, &x, Target::Class(label), Loss::SoftmaxCrossEntropy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::LogMelConfig;
    use proptest::prelude::*;
    use rand::Rng;

    fn map(frames: usize, bins: usize, values: Vec<f32>) -> FeatureMap {
        FeatureMap { frames, bins, values, config: LogMelConfig::default() }
    }

    fn tiny_spec() -> NetworkSpec {
        use LayerSpec::*;
        NetworkSpec {
            frames: 8,
            mel_bins: 7,
            layers: vec![
                Conv2d { out_channels: 3, kernel: 3, stride: 1 },
                Relu,
                Conv2d { out_channels: 4, kernel: 2, stride: 2 },
                Relu,
                Flatten,
                FullyConnected { out_units: 5 },
                Relu,
                FullyConnected { out_units: 3 },
            ],
        }
    }

    #[test]
    fn reference_layout() {
        let spec = NetworkSpec::reference(200, 64, 8);
        let topo = spec.topology().unwrap();
        assert_eq!(topo.shapes[1], Shape::new(16, 99, 31));
        assert_eq!(topo.shapes[3], Shape::new(16, 49, 15));
        assert_eq!(topo.shapes[4], Shape::new(32, 24, 7));
        assert_eq!(topo.shapes[6], Shape::new(64, 11, 3));
        let widths: Vec<usize> = spec.monitored_layers().unwrap().iter().map(|m| m.width).collect();
        assert_eq!(widths, vec![16, 32, 64, 128, 64, 8]);
    }

    #[test]
    fn zero_weights_give_zero_trace() {
        let spec = tiny_spec();
        let mut w = init_weights(&spec, 1).unwrap();
        w.tensors.iter_mut().for_each(|t| t.data.iter_mut().for_each(|v| *v = 0.0));
        let (logits, trace) = forward(&spec, &w, &map(8, 7, vec![0.7; 56])).unwrap();
        assert!(logits.iter().all(|&v| v == 0.0));
        assert!(trace.flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_conv_on_constant_input() {
        use LayerSpec::*;
        let spec = NetworkSpec {
            frames: 4,
            mel_bins: 4,
            layers: vec![
                Conv2d { out_channels: 1, kernel: 1, stride: 1 },
                Relu,
                Flatten,
                FullyConnected { out_units: 2 },
            ],
        };
        let mut w = init_weights(&spec, 0).unwrap();
        w.tensors[0].data = vec![1.0];
        w.tensors[1].data = vec![0.0];
        let (_, trace) = forward(&spec, &w, &map(4, 4, vec![2.5; 16])).unwrap();
        assert_eq!(trace.layers[0].values, vec![2.5]);
    }

    /// Independent nested-loop forward pass for `tiny_spec`-shaped networks.
    fn oracle_trace(w: &WeightStore, x: &[f32]) -> Vec<f64> {
        let t = |i: usize| w.tensors[i].data.iter().map(|&v| v as f64).collect::<Vec<f64>>();
        let (w0, b0, w1, b1, w2, b2, w3, b3) = (t(0), t(1), t(2), t(3), t(4), t(5), t(6), t(7));
        let x: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        // conv0: 1 -> 3 channels, 3x3, stride 1: 8x7 -> 6x5
        let mut c0 = vec![vec![vec![0.0; 5]; 6]; 3];
        for o in 0..3 {
            for y in 0..6 {
                for xx in 0..5 {
                    let mut acc = b0[o];
                    for ky in 0..3 {
                        for kx in 0..3 {
                            acc += w0[o * 9 + ky * 3 + kx] * x[(y + ky) * 7 + xx + kx];
                        }
                    }
                    c0[o][y][xx] = acc.max(0.0);
                }
            }
        }
        // conv1: 3 -> 4 channels, 2x2, stride 2: 6x5 -> 3x2
        let mut c1 = vec![vec![vec![0.0; 2]; 3]; 4];
        for o in 0..4 {
            for y in 0..3 {
                for xx in 0..2 {
                    let mut acc = b1[o];
                    for c in 0..3 {
                        for ky in 0..2 {
                            for kx in 0..2 {
                                acc += w1[((o * 3 + c) * 2 + ky) * 2 + kx] * c0[c][2 * y + ky][2 * xx + kx];
                            }
                        }
                    }
                    c1[o][y][xx] = acc.max(0.0);
                }
            }
        }
        let flat: Vec<f64> = c1.iter().flatten().flatten().copied().collect();
        let f0: Vec<f64> = (0..5)
            .map(|o| (b2[o] + (0..24).map(|i| w2[o * 24 + i] * flat[i]).sum::<f64>()).max(0.0))
            .collect();
        let f1: Vec<f64> = (0..3).map(|o| b3[o] + (0..5).map(|i| w3[o * 5 + i] * f0[i]).sum::<f64>()).collect();
        let mut out = Vec::new();
        out.extend(c0.iter().map(|ch| ch.iter().flatten().sum::<f64>() / 30.0));
        out.extend(c1.iter().map(|ch| ch.iter().flatten().sum::<f64>() / 6.0));
        out.extend(f0);
        out.extend(f1);
        out
    }

    #[test]
    fn trace_matches_nested_loop_oracle() {
        let spec = tiny_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for seed in 0..10 {
            let mut w = init_weights(&spec, seed).unwrap();
            for t in w.tensors.iter_mut() {
                t.data.iter_mut().for_each(|v| *v = rng.gen_range(-0.8..0.8));
            }
            let x: Vec<f32> = (0..56).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (_, trace) = forward(&spec, &w, &map(8, 7, x.clone())).unwrap();
            let want = oracle_trace(&w, &x);
            assert_eq!(trace.neuron_count(), want.len());
            // f32 forward vs f64 oracle: relative to each layer's magnitude
            let mut offset = 0;
            for layer in &trace.layers {
                let expect = &want[offset..offset + layer.values.len()];
                let scale = expect.iter().fold(1e-6f64, |m, v| m.max(v.abs()));
                for (a, b) in layer.values.iter().zip(expect) {
                    assert!((a - b).abs() <= 1e-5 * scale, "{}: {a} vs {b}", layer.id);
                }
                offset += layer.values.len();
            }
        }
    }

    proptest! {
        #[test]
        fn trace_layout_is_fixed_and_non_negative(seed in 0u64..500, scale in 0.1f32..20.0) {
            let spec = tiny_spec();
            let w = init_weights(&spec, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f32> = (0..56).map(|_| rng.gen_range(-scale..scale)).collect();
            let (_, trace) = forward(&spec, &w, &map(8, 7, x.clone())).unwrap();
            let layout: Vec<(String, usize)> = trace.layout().into_iter().map(|(a, b)| (a.to_string(), b)).collect();
            prop_assert_eq!(layout, vec![
                ("conv0".to_string(), 3), ("conv1".to_string(), 4), ("fc0".to_string(), 5), ("fc1".to_string(), 3)
            ]);
            for l in &trace.layers[..3] {
                prop_assert!(l.values.iter().all(|&v| v >= 0.0));
            }
            let (_, again) = forward(&spec, &w, &map(8, 7, x)).unwrap();
            let bits = |t: &ActivationTrace| t.flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&trace), bits(&again));
        }
    }

    #[test]
    fn shape_mismatch_errors() {
        let spec = tiny_spec();
        let w = init_weights(&spec, 0).unwrap();
        assert!(matches!(forward(&spec, &w, &map(7, 7, vec![0.0; 49])), Err(Error::Argument(_))));
        let mut short = w.clone();
        short.tensors.truncate(6);
        match Backbone::new(spec.clone(), &short) {
            Err(Error::Shape { layer, .. }) => assert_eq!(layer, "fc1.weight"),
            other => panic!("{other:?}"),
        }
        let mut wrong = w;
        wrong.tensors[2].dims = vec![4, 3, 1, 4];
        match Backbone::new(spec, &wrong) {
            Err(Error::Shape { layer, .. }) => assert_eq!(layer, "conv1.weight"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn gradient_checks() {
        let spec = tiny_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for seed in 0..5 {
            let w = init_weights(&spec, seed).unwrap();
            let x: Vec<f32> = (0..56).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let r = gradient_check(&spec, &w, &map(8, 7, x), (seed % 3) as usize).unwrap();
            assert!(r.max_relative_error < 1e-4, "{r:?}");
        }
    }

    #[test]
    fn zero_net_has_zero_hidden_gradients() {
        let spec = tiny_spec();
        let mut w = init_weights(&spec, 0).unwrap();
        w.tensors.iter_mut().for_each(|t| t.data.iter_mut().for_each(|v| *v = 0.0));
        let topo = spec.topology().unwrap();
        let params: Vec<Param<f64>> = nn::cast_params(&store_to_params(&topo, &spec.tensor_names().unwrap(), &w).unwrap());
        let x = vec![0.0f64; 56];
        let acts = topo.forward(&params, &x).unwrap();
        let (_, dout) = Loss::SoftmaxCrossEntropy.eval(acts.last().unwrap(), Target::Class(0));
        let mut g: Vec<Param<f64>> = nn::zeros_like(&params);
        topo.backward(&params, &acts, dout, &mut g);
        let numeric = nn::numeric_gradient(&topo, &params, &x, Target::Class(0), Loss::SoftmaxCrossEntropy).unwrap();
        for (a, n) in g[..3].iter().zip(&numeric[..3]) {
            assert!(a.weight.iter().chain(&a.bias).all(|&v| v == 0.0));
            assert!(n.weight.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn linear_net_matches_closed_form() {
        use LayerSpec::*;
        // 1x1 conv (2 channels) -> flatten -> fc(3); no ReLU anywhere.
        let spec = NetworkSpec {
            frames: 2,
            mel_bins: 2,
            layers: vec![Conv2d { out_channels: 2, kernel: 1, stride: 1 }, Flatten, FullyConnected { out_units: 3 }],
        };
        let topo = spec.topology().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let params: Vec<Param<f64>> = nn::cast_params(&topo.init_params(&mut rng));
        let x = [0.3, -1.2, 0.8, 0.5];
        let label = 2;
        let acts = topo.forward(&params, &x).unwrap();
        let (_, dout) = Loss::SoftmaxCrossEntropy.eval(acts.last().unwrap(), Target::Class(label));
        let mut g: Vec<Param<f64>> = nn::zeros_like(&params);
        topo.backward(&params, &acts, dout, &mut g);

        // closed form: h = conv(x), z = W h + b, dz = softmax(z) - onehot
        let (cw, cb) = (&params[0].weight, &params[0].bias);
        let h: Vec<f64> = (0..2).flat_map(|c| x.iter().map(move |&v| cw[c] * v + cb[c])).collect();
        let fw = &params[1].weight;
        let z: Vec<f64> = (0..3).map(|o| params[1].bias[o] + (0..8).map(|i| fw[o * 8 + i] * h[i]).sum::<f64>()).collect();
        let m = z.iter().cloned().fold(f64::MIN, f64::max);
        let s: f64 = z.iter().map(|v| (v - m).exp()).sum();
        let dz: Vec<f64> = (0..3).map(|o| (z[o] - m).exp() / s - if o == label { 1.0 } else { 0.0 }).collect();
        for o in 0..3 {
            for i in 0..8 {
                assert!((g[1].weight[o * 8 + i] - dz[o] * h[i]).abs() < 1e-8);
            }
            assert!((g[1].bias[o] - dz[o]).abs() < 1e-8);
        }
        for c in 0..2 {
            let dh: Vec<f64> = (0..4).map(|p| (0..3).map(|o| dz[o] * fw[o * 8 + c * 4 + p]).sum()).collect();
            let gw: f64 = (0..4).map(|p| dh[p] * x[p]).sum();
            let gb: f64 = dh.iter().sum();
            assert!((g[0].weight[c] - gw).abs() < 1e-8);
            assert!((g[0].bias[c] - gb).abs() < 1e-8);
        }
    }

    fn toy_dataset(n_per: usize, seed: u64) -> Vec<(FeatureMap, usize)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..3 * n_per)
            .map(|i| {
                let y = i % 3;
                let v = (0..56)
                    .map(|j| if j % 3 == y { 1.0 } else { 0.0 } + rng.gen_range(-0.3..0.3))
                    .collect();
                (map(8, 7, v), y)
            })
            .collect()
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let spec = tiny_spec();
        let data = toy_dataset(10, 3);
        let cfg = SgdConfig { learning_rate: 0.05, momentum: 0.9, decay: 0.0, epochs: 15, batch_size: 4, seed: 11 };
        let (a, log) = train_backbone(&spec, &data, &cfg).unwrap();
        let (b, _) = train_backbone(&spec, &data, &cfg).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert!(log.last().unwrap().loss < log[0].loss);
        assert!(log.last().unwrap().accuracy > 0.9, "{log:?}");
    }

    #[test]
    fn zero_lr_and_single_class() {
        let spec = tiny_spec();
        let data = toy_dataset(4, 1);
        let cfg = SgdConfig { learning_rate: 0.0, momentum: 0.9, decay: 0.0, epochs: 2, batch_size: 3, seed: 2 };
        let (w, _) = train_backbone(&spec, &data, &cfg).unwrap();
        assert_eq!(w, init_weights(&spec, 2).unwrap());
        let one: Vec<_> = data.into_iter().filter(|(_, y)| *y == 0).collect();
        assert!(matches!(train_backbone(&spec, &one, &cfg), Err(Error::Argument(_))));
    }
}
