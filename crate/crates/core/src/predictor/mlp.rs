//! Fully connected feed-forward network with hand-written
//! backpropagation and a versioned JSON file format.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{FeatureVector, FEATURE_COUNT};

/// Layer widths of the failure predictor, input first.
pub const DEFAULT_LAYER_DIMS: [usize; 7] = [FEATURE_COUNT, 32, 16, 8, 4, 2, 1];

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported model format version {0}")]
    Version(u32),
    #[error("invalid model: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu,
    Tanh,
    Sigmoid,
    Identity,
}

const LEAKY_SLOPE: f64 = 0.01;

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::LeakyRelu => {
                if z > 0.0 {
                    z
                } else {
                    LEAKY_SLOPE * z
                }
            }
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative given the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if z > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }
}

/// Per-feature z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; FEATURE_COUNT],
    pub std: [f64; FEATURE_COUNT],
}

impl NormStats {
    pub fn identity() -> Self {
        NormStats {
            mean: [0.0; FEATURE_COUNT],
            std: [1.0; FEATURE_COUNT],
        }
    }

    /// Population mean and standard deviation; constant features get a
    /// standard deviation of 1.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a FeatureVector>) -> Self {
        let rows: Vec<[f64; FEATURE_COUNT]> = rows.into_iter().map(|r| r.to_array()).collect();
        let n = rows.len().max(1) as f64;
        let mut mean = [0.0; FEATURE_COUNT];
        for r in &rows {
            for k in 0..FEATURE_COUNT {
                mean[k] += r[k];
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = [0.0; FEATURE_COUNT];
        for r in &rows {
            for k in 0..FEATURE_COUNT {
                var[k] += (r[k] - mean[k]).powi(2);
            }
        }
        let std = var.map(|v| {
            let s = (v / n).sqrt();
            if s > 1e-12 && s.is_finite() {
                s
            } else {
                1.0
            }
        });
        NormStats { mean, std }
    }

    pub fn apply(&self, x: &FeatureVector) -> [f64; FEATURE_COUNT] {
        let raw = x.to_array();
        std::array::from_fn(|k| (raw[k] - self.mean[k]) / self.std[k])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Dense {
    pub(crate) inputs: usize,
    pub(crate) outputs: usize,
    /// Row-major, `outputs x inputs`.
    pub(crate) weights: Vec<f64>,
    pub(crate) biases: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    #[inline]
    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let mut z = self.biases[o];
            for (w, xi) in row.iter().zip(x) {
                z += w * xi;
            }
            out.push(z);
        }
    }
}

/// Gradients with the same layout as the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub(crate) layers: Vec<Dense>,
}

impl Gradients {
    pub(crate) fn zero_like(model: &MlpModel) -> Self {
        Gradients {
            layers: model.layers.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect(),
        }
    }

    pub(crate) fn clear(&mut self) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
            l.biases.iter_mut().for_each(|b| *b = 0.0);
        }
    }

    /// Flattened in the same order as [`MlpModel::parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()).copied())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub(crate) layers: Vec<Dense>,
    hidden: Activation,
    output: Activation,
    norm: NormStats,
    seed: u64,
}

/// Scratch buffers for one forward/backward pass.
#[derive(Debug, Default)]
pub(crate) struct Trace {
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    delta: Vec<f64>,
    next_delta: Vec<f64>,
}

impl MlpModel {
    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
        seed: u64,
    ) -> Result<Self, ModelError> {
        check_dims(dims)?;
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut l = Dense::zeros(fan_in, fan_out);
                for v in &mut l.weights {
                    *v = rng.random_range(-limit..limit);
                }
                l
            })
            .collect();
        Ok(MlpModel {
            layers,
            hidden,
            output,
            norm: NormStats::identity(),
            seed,
        })
    }

    /// All weights and biases zero.
    pub fn zeros(dims: &[usize], hidden: Activation, output: Activation) -> Result<Self, ModelError> {
        check_dims(dims)?;
        Ok(MlpModel {
            layers: dims.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
            hidden,
            output,
            norm: NormStats::identity(),
            seed: 0,
        })
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].inputs];
        dims.extend(self.layers.iter().map(|l| l.outputs));
        dims
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn norm_stats(&self) -> &NormStats {
        &self.norm
    }

    pub fn set_norm_stats(&mut self, norm: NormStats) {
        self.norm = norm;
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Weights then biases, layer by layer.
    pub fn parameters(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()).copied())
            .collect()
    }

    /// Replaces every parameter, in the order of [`MlpModel::parameters`].
    pub fn set_parameters(&mut self, values: &[f64]) -> Result<(), ModelError> {
        if values.len() != self.parameter_count() {
            return Err(ModelError::Invalid(format!(
                "expected {} parameters, got {}",
                self.parameter_count(),
                values.len()
            )));
        }
        for (i, v) in values.iter().enumerate() {
            *self.parameter_mut(i) = *v;
        }
        Ok(())
    }

    pub(crate) fn parameter_mut(&mut self, mut index: usize) -> &mut f64 {
        for l in &mut self.layers {
            if index < l.weights.len() {
                return &mut l.weights[index];
            }
            index -= l.weights.len();
            if index < l.biases.len() {
                return &mut l.biases[index];
            }
            index -= l.biases.len();
        }
        panic!("parameter index out of range");
    }

    /// Failure probability for raw (unnormalized) features.
    pub fn forward(&self, x: &FeatureVector) -> f64 {
        self.forward_normalized(&self.norm.apply(x))
    }

    pub fn forward_normalized(&self, x: &[f64]) -> f64 {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            l.affine(&cur, &mut next);
            let act = if i == last { self.output } else { self.hidden };
            next.iter_mut().for_each(|z| *z = act.apply(*z));
            std::mem::swap(&mut cur, &mut next);
        }
        cur[0]
    }

    /// Adds d(squared error)/d(params) for one normalized example into
    /// `grads`, scaled by `scale`, and returns the squared error.
    pub(crate) fn accumulate(
        &self,
        x: &[f64],
        label: f64,
        scale: f64,
        grads: &mut Gradients,
        trace: &mut Trace,
    ) -> f64 {
        let n = self.layers.len();
        trace.pre.resize_with(n, Vec::new);
        trace.post.resize_with(n, Vec::new);
        for i in 0..n {
            let (done, rest) = trace.post.split_at_mut(i);
            let input: &[f64] = if i == 0 { x } else { &done[i - 1] };
            let pre = &mut trace.pre[i];
            self.layers[i].affine(input, pre);
            let act = if i == n - 1 { self.output } else { self.hidden };
            let post = &mut rest[0];
            post.clear();
            post.extend(pre.iter().map(|&z| act.apply(z)));
        }
        let y = trace.post[n - 1][0];
        let err = y - label;

        trace.delta.clear();
        let z = trace.pre[n - 1][0];
        trace.delta.push(2.0 * err * self.output.derivative(z, y) * scale);
        for i in (0..n).rev() {
            let layer = &self.layers[i];
            let input: &[f64] = if i == 0 { x } else { &trace.post[i - 1] };
            let g = &mut grads.layers[i];
            for (o, &d) in trace.delta.iter().enumerate() {
                g.biases[o] += d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (gw, xi) in row.iter_mut().zip(input) {
                    *gw += d * xi;
                }
            }
            if i == 0 {
                break;
            }
            trace.next_delta.clear();
            trace.next_delta.resize(layer.inputs, 0.0);
            for (o, &d) in trace.delta.iter().enumerate() {
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (nd, w) in trace.next_delta.iter_mut().zip(row) {
                    *nd += d * w;
                }
            }
            for (k, nd) in trace.next_delta.iter_mut().enumerate() {
                *nd *= self.hidden.derivative(trace.pre[i - 1][k], trace.post[i - 1][k]);
            }
            std::mem::swap(&mut trace.delta, &mut trace.next_delta);
        }
        err * err
    }

    /// Gradient of the squared error of a single raw example.
    pub fn gradient(&self, x: &FeatureVector, label: f64) -> Gradients {
        let mut g = Gradients::zero_like(self);
        let mut trace = Trace::default();
        self.accumulate(&self.norm.apply(x), label, 1.0, &mut g, &mut trace);
        g
    }

    pub(crate) fn step(&mut self, grads: &Gradients, velocity: &mut Gradients, lr: f64, momentum: f64) {
        for ((l, g), v) in self.layers.iter_mut().zip(&grads.layers).zip(&mut velocity.layers) {
            for ((w, gw), vw) in l.weights.iter_mut().zip(&g.weights).zip(&mut v.weights) {
                *vw = momentum * *vw - lr * gw;
                *w += *vw;
            }
            for ((b, gb), vb) in l.biases.iter_mut().zip(&g.biases).zip(&mut v.biases) {
                *vb = momentum * *vb - lr * gb;
                *b += *vb;
            }
        }
    }

    pub fn to_json(&self) -> Result<String, ModelError> {
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            layer_dims: self.layer_dims(),
            hidden_activation: self.hidden,
            output_activation: self.output,
            layers: self
                .layers
                .iter()
                .map(|l| LayerFile {
                    weights: l.weights.chunks(l.inputs).map(<[f64]>::to_vec).collect(),
                    biases: l.biases.clone(),
                })
                .collect(),
            norm_stats: self.norm.clone(),
            seed: self.seed,
        };
        let mut s = serde_json::to_string_pretty(&file)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        let file: ModelFile = serde_json::from_str(s)?;
        Self::from_file(file)
    }

    fn from_file(file: ModelFile) -> Result<Self, ModelError> {
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(ModelError::Version(file.format_version));
        }
        check_dims(&file.layer_dims)?;
        if file.layers.len() != file.layer_dims.len() - 1 {
            return Err(ModelError::Invalid("layer count does not match layer_dims".into()));
        }
        let mut layers = Vec::with_capacity(file.layers.len());
        for (i, lf) in file.layers.into_iter().enumerate() {
            let (inputs, outputs) = (file.layer_dims[i], file.layer_dims[i + 1]);
            if lf.weights.len() != outputs || lf.weights.iter().any(|r| r.len() != inputs) || lf.biases.len() != outputs
            {
                return Err(ModelError::Invalid(format!("layer {i} has wrong shape")));
            }
            let weights: Vec<f64> = lf.weights.into_iter().flatten().collect();
            if weights.iter().chain(&lf.biases).any(|v| !v.is_finite()) {
                return Err(ModelError::Invalid(format!("layer {i} has non-finite values")));
            }
            layers.push(Dense {
                inputs,
                outputs,
                weights,
                biases: lf.biases,
            });
        }
        let ns = &file.norm_stats;
        if ns.std.iter().any(|s| !(s.is_finite() && *s > 0.0)) || ns.mean.iter().any(|m| !m.is_finite()) {
            return Err(ModelError::Invalid("norm_stats must be finite with std > 0".into()));
        }
        Ok(MlpModel {
            layers,
            hidden: file.hidden_activation,
            output: file.output_activation,
            norm: file.norm_stats,
            seed: file.seed,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl Serialize for MlpModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let v: serde_json::Value = serde_json::from_str(&self.to_json().map_err(serde::ser::Error::custom)?)
            .map_err(serde::ser::Error::custom)?;
        v.serialize(s)
    }
}

impl<'de> Deserialize<'de> for MlpModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let file = ModelFile::deserialize(d)?;
        MlpModel::from_file(file).map_err(serde::de::Error::custom)
    }
}

fn check_dims(dims: &[usize]) -> Result<(), ModelError> {
    if dims.len() < 2 {
        return Err(ModelError::Invalid("need at least an input and an output layer".into()));
    }
    if dims[0] != FEATURE_COUNT {
        return Err(ModelError::Invalid(format!(
            "input width must be {FEATURE_COUNT}, got {}",
            dims[0]
        )));
    }
    if *dims.last().unwrap() != 1 {
        return Err(ModelError::Invalid("output width must be 1".into()));
    }
    if dims.contains(&0) {
        return Err(ModelError::Invalid("layer width 0".into()));
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerFile {
    weights: Vec<Vec<f64>>,
    biases: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    layer_dims: Vec<usize>,
    hidden_activation: Activation,
    output_activation: Activation,
    layers: Vec<LayerFile>,
    norm_stats: NormStats,
    seed: u64,
}
