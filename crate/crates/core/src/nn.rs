//! Small sequential network engine shared by the speaker backbone and the
//! detector head. Tensors are flat `Vec<T>` in channel-major (C, H, W) order;
//! the engine is generic over the scalar so that training can run in `f32`
//! while gradient checks run in `f64`.

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub trait Scalar: Float + std::fmt::Debug + Send + Sync + 'static {}
impl Scalar for f32 {}
impl Scalar for f64 {}

#[inline]
fn c<T: Scalar>(v: f64) -> T {
    T::from(v).expect("scalar conversion")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Shape { channels, height, width }
    }

    pub fn flat(len: usize) -> Self {
        Shape::new(len, 1, 1)
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d { out_channels: usize, kernel: usize, stride: usize },
    Relu,
    MaxPool { kernel: usize, stride: usize },
    Flatten,
    FullyConnected { out_units: usize },
}

impl LayerSpec {
    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv2d { .. } | LayerSpec::FullyConnected { .. })
    }
}

/// Weight and bias of one parametrized layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Param<T> {
    fn zeros_like<U>(other: &Param<U>) -> Self {
        Param { weight: vec![T::zero(); other.weight.len()], bias: vec![T::zero(); other.bias.len()] }
    }

    pub fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn zeros_like<T: Scalar, U>(params: &[Param<U>]) -> Vec<Param<T>> {
    params.iter().map(Param::zeros_like).collect()
}

pub fn cast_params<T: Scalar, U: Scalar>(params: &[Param<U>]) -> Vec<Param<T>> {
    params
        .iter()
        .map(|p| Param {
            weight: p.weight.iter().map(|&v| c(v.to_f64().unwrap())).collect(),
            bias: p.bias.iter().map(|&v| c(v.to_f64().unwrap())).collect(),
        })
        .collect()
}

/// A validated layer stack with every intermediate shape resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub input: Shape,
    pub layers: Vec<LayerSpec>,
    /// `shapes[i]` is the input shape of layer `i`; the last entry is the output.
    pub shapes: Vec<Shape>,
}

impl Topology {
    pub fn new(input: Shape, layers: Vec<LayerSpec>) -> Result<Self> {
        if input.is_empty() {
            return Err(Error::arg("network input shape has a zero dimension"));
        }
        let mut shapes = vec![input];
        for (i, layer) in layers.iter().enumerate() {
            let s = *shapes.last().unwrap();
            let bad = |msg: String| Error::Shape { layer: format!("{i}:{layer:?}"), msg };
            let next = match *layer {
                LayerSpec::Conv2d { out_channels, kernel, stride } => {
                    if out_channels == 0 || kernel == 0 || stride == 0 {
                        return Err(bad("zero-sized conv parameter".into()));
                    }
                    if s.height < kernel || s.width < kernel {
                        return Err(bad(format!("{kernel}x{kernel} kernel larger than input {s:?}")));
                    }
                    Shape::new(
                        out_channels,
                        (s.height - kernel) / stride + 1,
                        (s.width - kernel) / stride + 1,
                    )
                }
                LayerSpec::MaxPool { kernel, stride } => {
                    if kernel == 0 || stride == 0 {
                        return Err(bad("zero-sized pooling parameter".into()));
                    }
                    if s.height < kernel || s.width < kernel {
                        return Err(bad(format!("pool window larger than input {s:?}")));
                    }
                    Shape::new(s.channels, (s.height - kernel) / stride + 1, (s.width - kernel) / stride + 1)
                }
                LayerSpec::Relu => s,
                LayerSpec::Flatten => Shape::flat(s.len()),
                LayerSpec::FullyConnected { out_units } => {
                    if out_units == 0 {
                        return Err(bad("zero output units".into()));
                    }
                    Shape::flat(out_units)
                }
            };
            shapes.push(next);
        }
        Ok(Topology { input, layers, shapes })
    }

    pub fn output(&self) -> Shape {
        *self.shapes.last().unwrap()
    }

    /// (weight dims, bias dims) for every parametrized layer, in order.
    pub fn param_dims(&self) -> Vec<(usize, Vec<usize>, Vec<usize>)> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| {
                let s = self.shapes[i];
                match *l {
                    LayerSpec::Conv2d { out_channels, kernel, .. } => Some((
                        i,
                        vec![out_channels, s.channels, kernel, kernel],
                        vec![out_channels],
                    )),
                    LayerSpec::FullyConnected { out_units } => {
                        Some((i, vec![out_units, s.len()], vec![out_units]))
                    }
                    _ => None,
                }
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.param_dims()
            .iter()
            .map(|(_, w, b)| w.iter().product::<usize>() + b.iter().product::<usize>())
            .sum()
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_params<R: Rng>(&self, rng: &mut R) -> Vec<Param<f32>> {
        self.param_dims()
            .into_iter()
            .map(|(_, w, b)| {
                let (fan_in, fan_out) = if w.len() == 4 {
                    (w[1] * w[2] * w[3], w[0] * w[2] * w[3])
                } else {
                    (w[1], w[0])
                };
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
                let n: usize = w.iter().product();
                Param {
                    weight: (0..n).map(|_| rng.gen_range(-limit..=limit)).collect(),
                    bias: vec![0.0; b[0]],
                }
            })
            .collect()
    }

    pub fn check_params<T>(&self, params: &[Param<T>]) -> Result<()> {
        let dims = self.param_dims();
        if dims.len() != params.len() {
            return Err(Error::Shape {
                layer: "<network>".into(),
                msg: format!("expected {} parametrized layers, got {}", dims.len(), params.len()),
            });
        }
        for ((i, w, b), p) in dims.iter().zip(params) {
            let (wn, bn): (usize, usize) = (w.iter().product(), b.iter().product());
            if p.weight.len() != wn || p.bias.len() != bn {
                return Err(Error::Shape {
                    layer: format!("{i}:{:?}", self.layers[*i]),
                    msg: format!(
                        "expected {wn} weights / {bn} biases, got {} / {}",
                        p.weight.len(),
                        p.bias.len()
                    ),
                });
            }
        }
        Ok(())
    }

    /// Runs the stack and returns every intermediate tensor:
    /// `acts[0]` is the input, `acts[i + 1]` the output of layer `i`.
    pub fn forward<T: Scalar>(&self, params: &[Param<T>], input: &[T]) -> Result<Vec<Vec<T>>> {
        if input.len() != self.input.len() {
            return Err(Error::arg(format!(
                "input has {} values, network expects {:?} = {}",
                input.len(),
                self.input,
                self.input.len()
            )));
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.to_vec());
        let mut p = 0;
        for (i, layer) in self.layers.iter().enumerate() {
            let x = acts.last().unwrap();
            let (si, so) = (self.shapes[i], self.shapes[i + 1]);
            let y = match *layer {
                LayerSpec::Conv2d { kernel, stride, .. } => {
                    let out = conv_forward(&params[p], x, si, so, kernel, stride);
                    p += 1;
                    out
                }
                LayerSpec::FullyConnected { .. } => {
                    let out = dense_forward(&params[p], x, so.len());
                    p += 1;
                    out
                }
                LayerSpec::Relu => x.iter().map(|&v| v.max(T::zero())).collect(),
                LayerSpec::MaxPool { kernel, stride } => pool_forward(x, si, so, kernel, stride).0,
                LayerSpec::Flatten => x.clone(),
            };
            acts.push(y);
        }
        Ok(acts)
    }

    /// Accumulates parameter gradients of a scalar loss into `grads`, given
    /// the cached activations and d(loss)/d(output).
    pub fn backward<T: Scalar>(
        &self,
        params: &[Param<T>],
        acts: &[Vec<T>],
        grad_out: Vec<T>,
        grads: &mut [Param<T>],
    ) {
        let mut g = grad_out;
        let mut p = params.len();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = &acts[i];
            let (si, so) = (self.shapes[i], self.shapes[i + 1]);
            g = match *layer {
                LayerSpec::Conv2d { kernel, stride, .. } => {
                    p -= 1;
                    conv_backward(&params[p], x, &g, si, so, kernel, stride, &mut grads[p], i > 0)
                }
                LayerSpec::FullyConnected { .. } => {
                    p -= 1;
                    dense_backward(&params[p], x, &g, &mut grads[p], i > 0)
                }
                LayerSpec::Relu => g
                    .iter()
                    .zip(x)
                    .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                    .collect(),
                LayerSpec::MaxPool { kernel, stride } => {
                    let (_, arg) = pool_forward(x, si, so, kernel, stride);
                    let mut gin = vec![T::zero(); x.len()];
                    for (o, &src) in arg.iter().enumerate() {
                        gin[src] = gin[src] + g[o];
                    }
                    gin
                }
                LayerSpec::Flatten => g,
            };
        }
    }

    /// Piecewise-linear regime of a forward pass: every ReLU gate and every
    /// pooling argmax. Two inputs with equal patterns lie on the same linear
    /// piece of the network.
    pub fn activation_pattern<T: Scalar>(&self, acts: &[Vec<T>]) -> Vec<usize> {
        let mut pattern = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Relu => pattern.extend(acts[i].iter().map(|&v| (v > T::zero()) as usize)),
                LayerSpec::MaxPool { kernel, stride } => {
                    pattern.extend(pool_forward(&acts[i], self.shapes[i], self.shapes[i + 1], kernel, stride).1)
                }
                _ => {}
            }
        }
        pattern
    }
}

fn conv_forward<T: Scalar>(
    param: &Param<T>,
    x: &[T],
    si: Shape,
    so: Shape,
    k: usize,
    s: usize,
) -> Vec<T> {
    let (ih, iw) = (si.height, si.width);
    let (oh, ow) = (so.height, so.width);
    let plane = oh * ow;
    let mut out = vec![T::zero(); so.len()];
    for o in 0..so.channels {
        let dst = &mut out[o * plane..(o + 1) * plane];
        dst.iter_mut().for_each(|v| *v = param.bias[o]);
        for ch in 0..si.channels {
            let src = &x[ch * ih * iw..(ch + 1) * ih * iw];
            for ky in 0..k {
                for kx in 0..k {
                    let w = param.weight[((o * si.channels + ch) * k + ky) * k + kx];
                    if w == T::zero() {
                        continue;
                    }
                    for y in 0..oh {
                        let row = &src[(y * s + ky) * iw + kx..];
                        let drow = &mut dst[y * ow..(y + 1) * ow];
                        for (xo, d) in drow.iter_mut().enumerate() {
                            *d = *d + w * row[xo * s];
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_backward<T: Scalar>(
    param: &Param<T>,
    x: &[T],
    g: &[T],
    si: Shape,
    so: Shape,
    k: usize,
    s: usize,
    grad: &mut Param<T>,
    need_input_grad: bool,
) -> Vec<T> {
    let (ih, iw) = (si.height, si.width);
    let (oh, ow) = (so.height, so.width);
    let plane = oh * ow;
    let mut gin = if need_input_grad { vec![T::zero(); x.len()] } else { Vec::new() };
    for o in 0..so.channels {
        let go = &g[o * plane..(o + 1) * plane];
        grad.bias[o] = grad.bias[o] + go.iter().fold(T::zero(), |a, &b| a + b);
        for ch in 0..si.channels {
            let base = ch * ih * iw;
            for ky in 0..k {
                for kx in 0..k {
                    let wi = ((o * si.channels + ch) * k + ky) * k + kx;
                    let w = param.weight[wi];
                    let mut gw = T::zero();
                    for y in 0..oh {
                        let off = base + (y * s + ky) * iw + kx;
                        for xo in 0..ow {
                            let gv = go[y * ow + xo];
                            gw = gw + gv * x[off + xo * s];
                            if need_input_grad {
                                gin[off + xo * s] = gin[off + xo * s] + w * gv;
                            }
                        }
                    }
                    grad.weight[wi] = grad.weight[wi] + gw;
                }
            }
        }
    }
    gin
}

fn dense_forward<T: Scalar>(param: &Param<T>, x: &[T], out_units: usize) -> Vec<T> {
    let n = x.len();
    (0..out_units)
        .map(|o| {
            param.weight[o * n..(o + 1) * n]
                .iter()
                .zip(x)
                .fold(param.bias[o], |acc, (&w, &v)| acc + w * v)
        })
        .collect()
}

fn dense_backward<T: Scalar>(
    param: &Param<T>,
    x: &[T],
    g: &[T],
    grad: &mut Param<T>,
    need_input_grad: bool,
) -> Vec<T> {
    let n = x.len();
    let mut gin = if need_input_grad { vec![T::zero(); n] } else { Vec::new() };
    for (o, &gv) in g.iter().enumerate() {
        grad.bias[o] = grad.bias[o] + gv;
        if gv == T::zero() {
            continue;
        }
        let wrow = &param.weight[o * n..(o + 1) * n];
        let grow = &mut grad.weight[o * n..(o + 1) * n];
        for i in 0..n {
            grow[i] = grow[i] + gv * x[i];
        }
        if need_input_grad {
            for i in 0..n {
                gin[i] = gin[i] + gv * wrow[i];
            }
        }
    }
    gin
}

/// Max pooling; also returns the flat input index chosen for every output
/// (first maximum in row-major window order).
fn pool_forward<T: Scalar>(x: &[T], si: Shape, so: Shape, k: usize, s: usize) -> (Vec<T>, Vec<usize>) {
    let mut out = Vec::with_capacity(so.len());
    let mut arg = Vec::with_capacity(so.len());
    for ch in 0..so.channels {
        let base = ch * si.height * si.width;
        for y in 0..so.height {
            for xo in 0..so.width {
                let mut best = base + (y * s) * si.width + xo * s;
                for ky in 0..k {
                    for kx in 0..k {
                        let idx = base + (y * s + ky) * si.width + xo * s + kx;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

/// Training objective attached to the network output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    /// Multi-class logits, target is a class index.
    SoftmaxCrossEntropy,
    /// Single logit, target is 0 or 1.
    SigmoidBinaryCrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Class(usize),
    Binary(f64),
}

impl Loss {
    /// Loss value and its gradient with respect to the network output.
    pub fn eval<T: Scalar>(&self, out: &[T], target: Target) -> (T, Vec<T>) {
        match (self, target) {
            (Loss::SoftmaxCrossEntropy, Target::Class(label)) => {
                let m = out.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
                let exps: Vec<T> = out.iter().map(|&v| (v - m).exp()).collect();
                let z = exps.iter().fold(T::zero(), |a, &b| a + b);
                let loss = z.ln() - (out[label] - m);
                let grad = exps
                    .iter()
                    .enumerate()
                    .map(|(i, &e)| e / z - if i == label { T::one() } else { T::zero() })
                    .collect();
                (loss, grad)
            }
            (Loss::SigmoidBinaryCrossEntropy, Target::Binary(y)) => {
                let z = out[0];
                let y: T = c(y);
                // log(1 + e^z) - y z, written to stay finite for large |z|
                let loss = z.max(T::zero()) - z * y + (-z.abs()).exp().ln_1p();
                (loss, vec![sigmoid(z) - y])
            }
            (loss, target) => panic!("target {target:?} does not fit loss {loss:?}"),
        }
    }

    pub fn is_correct<T: Scalar>(&self, out: &[T], target: Target) -> bool {
        match target {
            Target::Class(label) => argmax(out) == label,
            Target::Binary(y) => (sigmoid(out[0]) >= c(0.5)) == (y >= 0.5),
        }
    }
}

pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

pub fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// Mini-batch SGD with classical momentum and inverse-time decay:
/// `lr_t = lr / (1 + decay * t)` with `t` the global step index,
/// `v = momentum * v - lr_t * g`, `w += v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::arg("learning rate must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::arg("momentum must lie in [0, 1)"));
        }
        if !(self.decay >= 0.0 && self.decay.is_finite()) {
            return Err(Error::arg("decay must be finite and non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::arg("batch size must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean per-example loss observed while the epoch was running.
    pub running_loss: f64,
    /// Mean loss over the whole training set after the epoch's last update.
    pub loss: f64,
    pub accuracy: f64,
}

/// Mean loss and accuracy of `params` over a dataset.
pub fn evaluate<T: Scalar>(
    topo: &Topology,
    params: &[Param<T>],
    inputs: &[&[T]],
    targets: &[Target],
    loss: Loss,
) -> Result<(f64, f64)> {
    let mut total = 0.0;
    let mut correct = 0usize;
    for (x, &t) in inputs.iter().zip(targets) {
        let acts = topo.forward(params, x)?;
        let out = acts.last().unwrap();
        total += loss.eval(out, t).0.to_f64().unwrap();
        correct += loss.is_correct(out, t) as usize;
    }
    let n = inputs.len().max(1) as f64;
    Ok((total / n, correct as f64 / n))
}

/// Deterministic single-threaded training. Batches are drawn in a freshly
/// shuffled order each epoch from one seeded generator.
pub fn train<T: Scalar>(
    topo: &Topology,
    params: &mut [Param<T>],
    inputs: &[&[T]],
    targets: &[Target],
    loss: Loss,
    cfg: &SgdConfig,
) -> Result<Vec<EpochStats>> {
    cfg.validate()?;
    topo.check_params(params)?;
    if inputs.len() != targets.len() || inputs.is_empty() {
        return Err(Error::arg("training set is empty or inputs/targets differ in length"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut velocity: Vec<Param<T>> = zeros_like(params);
    let mut grads: Vec<Param<T>> = zeros_like(params);
    let momentum: T = c(cfg.momentum);
    let mut step: u64 = 0;
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut running = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            for g in grads.iter_mut() {
                g.weight.iter_mut().for_each(|v| *v = T::zero());
                g.bias.iter_mut().for_each(|v| *v = T::zero());
            }
            for &i in batch {
                let acts = topo.forward(params, inputs[i])?;
                let (l, dout) = loss.eval(acts.last().unwrap(), targets[i]);
                running += l.to_f64().unwrap();
                topo.backward(params, &acts, dout, &mut grads);
            }
            let lr_t = cfg.learning_rate / (1.0 + cfg.decay * step as f64);
            let scale: T = c(lr_t / batch.len() as f64);
            for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(&grads) {
                for ((w, vel), &gw) in p.weight.iter_mut().zip(v.weight.iter_mut()).zip(&g.weight) {
                    *vel = momentum * *vel - scale * gw;
                    *w = *w + *vel;
                }
                for ((b, vel), &gb) in p.bias.iter_mut().zip(v.bias.iter_mut()).zip(&g.bias) {
                    *vel = momentum * *vel - scale * gb;
                    *b = *b + *vel;
                }
            }
            step += 1;
        }
        let (full, acc) = evaluate(topo, params, inputs, targets, loss)?;
        log.push(EpochStats {
            epoch,
            running_loss: running / inputs.len() as f64,
            loss: full,
            accuracy: acc,
        });
        log::debug!("epoch {epoch}: loss {full:.5} acc {acc:.4}");
    }
    Ok(log)
}

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
    pub checked: usize,
    /// Parameters whose ±ε probe crossed a ReLU or pooling switch point,
    /// where the loss is not differentiable along that coordinate.
    pub skipped_kinks: usize,
}

/// Relative error with a small absolute floor so that coordinates whose true
/// gradient is zero do not divide by zero.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

pub const GRAD_CHECK_EPSILON: f64 = 1e-3;

/// Central-difference gradient of every parameter.
pub fn numeric_gradient(
    topo: &Topology,
    params: &[Param<f64>],
    input: &[f64],
    target: Target,
    loss: Loss,
) -> Result<Vec<Param<f64>>> {
    let eps = GRAD_CHECK_EPSILON;
    let mut probe = params.to_vec();
    let mut out: Vec<Param<f64>> = zeros_like(params);
    let loss_at = |probe: &[Param<f64>]| -> Result<f64> {
        Ok(loss.eval(topo.forward(probe, input)?.last().unwrap(), target).0)
    };
    for li in 0..params.len() {
        for j in 0..params[li].weight.len() {
            let orig = probe[li].weight[j];
            probe[li].weight[j] = orig + eps;
            let plus = loss_at(&probe)?;
            probe[li].weight[j] = orig - eps;
            let minus = loss_at(&probe)?;
            probe[li].weight[j] = orig;
            out[li].weight[j] = (plus - minus) / (2.0 * eps);
        }
        for j in 0..params[li].bias.len() {
            let orig = probe[li].bias[j];
            probe[li].bias[j] = orig + eps;
            let plus = loss_at(&probe)?;
            probe[li].bias[j] = orig - eps;
            let minus = loss_at(&probe)?;
            probe[li].bias[j] = orig;
            out[li].bias[j] = (plus - minus) / (2.0 * eps);
        }
    }
    Ok(out)
}

/// Central-difference check of every parameter, in `f64` throughout.
pub fn gradient_check(
    topo: &Topology,
    params: &[Param<f64>],
    input: &[f64],
    target: Target,
    loss: Loss,
) -> Result<GradCheckReport> {
    topo.check_params(params)?;
    let acts = topo.forward(params, input)?;
    let base_pattern = topo.activation_pattern(&acts);
    let (_, dout) = loss.eval(acts.last().unwrap(), target);
    let mut analytic: Vec<Param<f64>> = zeros_like(params);
    topo.backward(params, &acts, dout, &mut analytic);

    let mut probe = params.to_vec();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        max_absolute_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
    };
    let eps = GRAD_CHECK_EPSILON;
    for li in 0..params.len() {
        for which in 0..2 {
            let n = if which == 0 { params[li].weight.len() } else { params[li].bias.len() };
            for j in 0..n {
                let eval_at = |delta: f64, probe: &mut Vec<Param<f64>>| -> Result<(f64, bool)> {
                    let slot = if which == 0 { &mut probe[li].weight[j] } else { &mut probe[li].bias[j] };
                    let orig = *slot;
                    *slot = orig + delta;
                    let a = topo.forward(probe, input)?;
                    let same = topo.activation_pattern(&a) == base_pattern;
                    let l = loss.eval(a.last().unwrap(), target).0;
                    let slot = if which == 0 { &mut probe[li].weight[j] } else { &mut probe[li].bias[j] };
                    *slot = orig;
                    Ok((l, same))
                };
                let (plus, same_p) = eval_at(eps, &mut probe)?;
                let (minus, same_m) = eval_at(-eps, &mut probe)?;
                if !(same_p && same_m) {
                    report.skipped_kinks += 1;
                    continue;
                }
                let numeric = (plus - minus) / (2.0 * eps);
                let a = if which == 0 { analytic[li].weight[j] } else { analytic[li].bias[j] };
                report.max_relative_error = report.max_relative_error.max(relative_error(a, numeric));
                report.max_absolute_error = report.max_absolute_error.max((a - numeric).abs());
                report.checked += 1;
            }
        }
    }
    Ok(report)
}
