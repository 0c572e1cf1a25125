//! Neuron-coverage features over activation traces.
//!
//! * Layer thresholds: the grand mean of each layer's neuron outputs over a
//!   calibration set (sum over inputs and neurons, divided by set size times
//!   layer width).
//! * ACN: per layer, how many neurons output strictly more than the layer
//!   threshold.
//! * TKAN: per layer, the `k` largest neuron outputs, descending.

use serde::{Deserialize, Serialize};

use crate::backbone::ActivationTrace;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Acn,
    Tkan,
}

impl Criterion {
    pub fn name(&self) -> &'static str {
        match self {
            Criterion::Acn => "acn",
            Criterion::Tkan => "tkan",
        }
    }
}

impl std::fmt::Display for Criterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Criterion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "acn" | "ACN" => Ok(Criterion::Acn),
            "tkan" | "TKAN" => Ok(Criterion::Tkan),
            other => Err(Error::arg(format!("unknown criterion `{other}` (acn or tkan)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageConfig {
    pub criterion: Criterion,
    /// Top-k size, used by TKAN only.
    pub k: usize,
    /// Divide ACN counts by the layer width.
    #[serde(default)]
    pub normalize_acn: bool,
}

impl Default for CoverageConfig {
    fn default() -> Self {
        CoverageConfig { criterion: Criterion::Tkan, k: 5, normalize_acn: false }
    }
}

/// Per-layer activation thresholds aligned with the trace layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerThresholds {
    pub layers: Vec<(String, f64)>,
    pub calibration_size: usize,
}

impl LayerThresholds {
    pub fn get(&self, layer_id: &str) -> Option<f64> {
        self.layers.iter().find(|(id, _)| id == layer_id).map(|(_, d)| *d)
    }

    /// Line-oriented text form: a `# calibration_size N` comment, then one
    /// `layer_id<TAB>threshold` line per layer. Values print in shortest round-trip
    /// form so that parsing restores the exact bits.
    pub fn to_text(&self) -> String {
        let mut s = format!("# calibration_size {}\n", self.calibration_size);
        for (id, d) in &self.layers {
            s.push_str(&format!("{id}\t{d:?}\n"));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut layers = Vec::new();
        let mut calibration_size = 0;
        for (n, line) in text.lines().enumerate() {
            let line_no = Some(n + 1);
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(v) = rest.trim().strip_prefix("calibration_size") {
                    calibration_size = v
                        .trim()
                        .parse()
                        .map_err(|_| Error::parse(line_no, "bad calibration_size"))?;
                }
                continue;
            }
            let (id, value) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(line_no, "expected `layer_id<TAB>threshold`"))?;
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::parse(line_no, format!("bad threshold `{value}`")))?;
            if !value.is_finite() {
                return Err(Error::parse(line_no, "threshold is not finite"));
            }
            layers.push((id.to_string(), value));
        }
        Ok(LayerThresholds { layers, calibration_size })
    }
}

fn same_layout(a: &ActivationTrace, b: &ActivationTrace) -> bool {
    a.layers.len() == b.layers.len()
        && a.layers.iter().zip(&b.layers).all(|(x, y)| x.id == y.id && x.values.len() == y.values.len())
}

/// Grand mean of every layer's outputs over the calibration traces, summed
/// sequentially in input order.
pub fn calibrate_thresholds(traces: &[ActivationTrace]) -> Result<LayerThresholds> {
    let first = traces.first().ok_or_else(|| Error::arg("calibration set is empty"))?;
    if let Some(i) = traces.iter().position(|t| !same_layout(first, t)) {
        return Err(Error::arg(format!("trace {i} has a different layer layout")));
    }
    let layers = first
        .layers
        .iter()
        .enumerate()
        .map(|(l, layer)| {
            if layer.values.is_empty() {
                return Err(Error::arg(format!("layer `{}` has no neurons", layer.id)));
            }
            let mut sum = 0.0f64;
            for t in traces {
                for &v in &t.layers[l].values {
                    sum += v;
                }
            }
            let mean = sum / (traces.len() * layer.values.len()) as f64;
            Ok((layer.id.clone(), mean))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LayerThresholds { layers, calibration_size: traces.len() })
}

/// Which slots of a feature vector came from which layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSlot {
    pub layer_id: String,
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub layout: Vec<FeatureSlot>,
}

impl FeatureVector {
    /// Column names such as `acn_fc1` or `tkan_conv0_r2` (rank 2 = third largest).
    pub fn column_names(&self, criterion: Criterion) -> Vec<String> {
        let mut names = Vec::with_capacity(self.values.len());
        for slot in &self.layout {
            match criterion {
                Criterion::Acn => names.push(format!("acn_{}", slot.layer_id)),
                Criterion::Tkan => {
                    names.extend((0..slot.len).map(|r| format!("tkan_{}_r{r}", slot.layer_id)))
                }
            }
        }
        names
    }
}

/// Strict `>` count of neurons above each layer's threshold.
pub fn acn_features(trace: &ActivationTrace, thresholds: &LayerThresholds) -> Result<FeatureVector> {
    acn_features_with(trace, thresholds, false)
}

pub fn acn_features_with(
    trace: &ActivationTrace,
    thresholds: &LayerThresholds,
    normalize: bool,
) -> Result<FeatureVector> {
    if trace.layers.len() != thresholds.layers.len() {
        return Err(Error::arg(format!(
            "trace has {} layers, thresholds cover {}",
            trace.layers.len(),
            thresholds.layers.len()
        )));
    }
    let mut values = Vec::with_capacity(trace.layers.len());
    let mut layout = Vec::with_capacity(trace.layers.len());
    for (i, (layer, (id, delta))) in trace.layers.iter().zip(&thresholds.layers).enumerate() {
        if &layer.id != id {
            return Err(Error::arg(format!("layer {i} is `{}` in the trace but `{id}` in the thresholds", layer.id)));
        }
        let count = layer.values.iter().filter(|&&v| v > *delta).count() as f64;
        values.push(if normalize { count / layer.values.len() as f64 } else { count });
        layout.push(FeatureSlot { layer_id: id.clone(), start: i, len: 1 });
    }
    Ok(FeatureVector { values, layout })
}

/// The `k` largest outputs of each layer, descending, ties broken by
/// ascending neuron index.
pub fn tkan_features(trace: &ActivationTrace, k: usize) -> Result<FeatureVector> {
    if k == 0 {
        return Err(Error::arg("k must be positive"));
    }
    let mut values = Vec::with_capacity(k * trace.layers.len());
    let mut layout = Vec::with_capacity(trace.layers.len());
    for layer in &trace.layers {
        if layer.values.len() < k {
            return Err(Error::arg(format!(
                "layer `{}` has {} neurons, fewer than k = {k}",
                layer.id,
                layer.values.len()
            )));
        }
        let mut idx: Vec<usize> = (0..layer.values.len()).collect();
        // stable sort keeps ascending index order among equal values
        idx.sort_by(|&a, &b| layer.values[b].total_cmp(&layer.values[a]));
        layout.push(FeatureSlot { layer_id: layer.id.clone(), start: values.len(), len: k });
        values.extend(idx[..k].iter().map(|&i| layer.values[i]));
    }
    Ok(FeatureVector { values, layout })
}

/// Dispatches on the configured criterion.
pub fn extract(trace: &ActivationTrace, config: &CoverageConfig, thresholds: Option<&LayerThresholds>) -> Result<FeatureVector> {
    match config.criterion {
        Criterion::Acn => {
            let th = thresholds.ok_or_else(|| Error::arg("ACN features need calibrated thresholds"))?;
            acn_features_with(trace, th, config.normalize_acn)
        }
        Criterion::Tkan => tkan_features(trace, config.k),
    }
}
