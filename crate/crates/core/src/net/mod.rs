//! Feed-forward embedding network with hand-written gradients.
//!
//! Topology: `input -> [standardize] -> (Dense + ReLU)* -> Dense (embedding)
//! -> Dense (classifier head)`. The embedding is the linear output just
//! before the head and is what re-identification compares.

mod autoencoder;
pub mod checkpoint;
mod input;
mod layer;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use autoencoder::{train_autoencoder, Autoencoder};
pub use checkpoint::{load_net, read_net, save_net, write_net};
pub use input::InputPipeline;
pub use layer::{Activation, Dense};
pub use train::{
    class_labels, fine_tune_domain, fine_tune_hard, mine_hard_negatives, train_classifier,
    train_id_baseline, TrainLog, TrainSchedule,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub embed_dim: usize,
    pub head_dim: usize,
    pub standardize_input: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            input_dim: 108,
            hidden_dims: vec![64],
            embed_dim: 32,
            head_dim: 2,
            standardize_input: true,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0
            || self.embed_dim == 0
            || self.head_dim == 0
            || self.hidden_dims.iter().any(|&d| d == 0)
        {
            return Err(Error::InvalidArgument(format!(
                "all network dimensions must be >= 1: {self:?}"
            )));
        }
        Ok(())
    }

    /// Widths of every layer output, head last.
    fn layer_dims(&self) -> Vec<(usize, usize, Activation)> {
        let mut dims = Vec::new();
        let mut prev = self.input_dim;
        for &h in &self.hidden_dims {
            dims.push((prev, h, Activation::Relu));
            prev = h;
        }
        dims.push((prev, self.embed_dim, Activation::Linear));
        dims.push((self.embed_dim, self.head_dim, Activation::Linear));
        dims
    }
}

/// Per-coordinate input standardisation fitted on a training set.
#[derive(Debug, Clone, PartialEq)]
pub struct InputNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl InputNorm {
    /// Fits mean and standard deviation; near-constant coordinates keep std 1.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let dim = rows.first().ok_or(Error::EmptyPool)?.len();
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n as f64).sqrt();
                if sd > 1e-8 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedNet {
    config: NetConfig,
    /// Hidden layers, the embedding layer, then the head.
    layers: Vec<Dense>,
    norm: Option<InputNorm>,
}

/// Gradients (or momentum buffers) shaped like an [`EmbedNet`]'s layers.
#[derive(Debug, Clone, PartialEq)]
pub struct GradSet {
    pub layers: Vec<Dense>,
}

impl GradSet {
    pub fn zeros_like(layers: &[Dense]) -> Self {
        Self {
            layers: layers.iter().map(Dense::zeros_like).collect(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Dense::num_params).sum()
    }

    /// Flat coordinate `i` over all layers, weights before biases.
    pub fn get(&self, i: usize) -> f64 {
        let (l, j) = locate(&self.layers, i);
        self.layers[l].param(j)
    }

    fn scale(&mut self, s: f64) {
        self.layers.iter_mut().for_each(|l| l.scale(s));
    }
}

fn locate(layers: &[Dense], mut i: usize) -> (usize, usize) {
    for (l, layer) in layers.iter().enumerate() {
        if i < layer.num_params() {
            return (l, i);
        }
        i -= layer.num_params();
    }
    panic!("parameter index out of range");
}

/// Softmax with max-subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

impl EmbedNet {
    pub fn new<R: Rng + ?Sized>(config: NetConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let layers = config
            .layer_dims()
            .into_iter()
            .map(|(i, o, a)| Dense::init(i, o, a, rng))
            .collect();
        Ok(Self {
            config,
            layers,
            norm: None,
        })
    }

    /// Assembles a net from explicit layers, checking them against `config`.
    pub fn from_parts(config: NetConfig, layers: Vec<Dense>, norm: Option<InputNorm>) -> Result<Self> {
        config.validate()?;
        let dims = config.layer_dims();
        if dims.len() != layers.len() {
            return Err(Error::dims("layer count", dims.len(), layers.len()));
        }
        for (l, ((i, o, a), layer)) in dims.iter().zip(&layers).enumerate() {
            if layer.inputs != *i
                || layer.outputs != *o
                || layer.activation != *a
                || layer.weights.len() != i * o
                || layer.bias.len() != *o
            {
                return Err(Error::InvalidArgument(format!(
                    "layer {l} shape does not match config"
                )));
            }
            if !layer.is_finite() {
                return Err(Error::InvalidArgument(format!("layer {l} has non-finite values")));
            }
        }
        if let Some(n) = &norm {
            if n.mean.len() != config.input_dim || n.std.len() != config.input_dim {
                return Err(Error::dims("input norm", config.input_dim, n.mean.len()));
            }
        }
        Ok(Self { config, layers, norm })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn norm(&self) -> Option<&InputNorm> {
        self.norm.as_ref()
    }

    pub fn set_norm(&mut self, norm: Option<InputNorm>) {
        self.norm = norm;
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Dense::num_params).sum()
    }

    pub fn param(&self, i: usize) -> f64 {
        let (l, j) = locate(&self.layers, i);
        self.layers[l].param(j)
    }

    pub fn param_mut(&mut self, i: usize) -> &mut f64 {
        let (l, j) = locate(&self.layers, i);
        self.layers[l].param_mut(j)
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Dense::is_finite)
    }

    /// Embedding layers only (head excluded).
    pub fn trunk(&self) -> &[Dense] {
        &self.layers[..self.layers.len() - 1]
    }

    fn prepare(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.config.input_dim {
            return Err(Error::dims("network input", self.config.input_dim, x.len()));
        }
        Ok(match (&self.norm, self.config.standardize_input) {
            (Some(n), true) => n.apply(x),
            _ => x.to_vec(),
        })
    }

    /// Returns `(embedding, logits)`.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let x = self.prepare(x)?;
        let mut outs = layer::forward_cached(&self.layers, &x);
        let logits = outs.pop().expect("head present");
        let embedding = outs.pop().expect("embedding layer present");
        Ok((embedding, logits))
    }

    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        let x = self.prepare(x)?;
        let mut outs = layer::forward_cached(self.trunk(), &x);
        Ok(outs.pop().expect("embedding layer present"))
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(x)?.1))
    }

    /// Mean softmax cross-entropy over the batch and its exact gradient.
    pub fn loss_and_grads(&self, inputs: &[&[f64]], labels: &[usize]) -> Result<(f64, GradSet)> {
        if inputs.len() != labels.len() {
            return Err(Error::dims("labels", inputs.len(), labels.len()));
        }
        if inputs.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let classes = self.config.head_dim;
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        let mut grads = GradSet::zeros_like(&self.layers);
        let mut loss = 0.0;
        for (x, &label) in inputs.iter().zip(labels) {
            let x = self.prepare(x)?;
            let outs = layer::forward_cached(&self.layers, &x);
            let mut p = softmax(outs.last().expect("head present"));
            loss -= p[label].max(f64::MIN_POSITIVE).ln();
            p[label] -= 1.0;
            layer::backward_cached(&self.layers, &x, &outs, p, &mut grads.layers, false);
        }
        let n = inputs.len() as f64;
        grads.scale(1.0 / n);
        Ok((loss / n, grads))
    }

    /// `v' = momentum * v + grads; params' = params - lr * v'`
    pub fn sgd_step(&mut self, grads: &GradSet, lr: f64, momentum: f64, velocity: &mut GradSet) {
        layer::sgd_update(&mut self.layers, &grads.layers, lr, momentum, &mut velocity.layers);
    }

    /// Swaps in a freshly initialised `new_head_dim`-way head; embedding layers are kept.
    pub fn replace_head<R: Rng + ?Sized>(&self, new_head_dim: usize, rng: &mut R) -> Result<Self> {
        if new_head_dim < 2 {
            return Err(Error::InvalidArgument(format!(
                "new head needs >= 2 classes, got {new_head_dim}"
            )));
        }
        let mut net = self.clone();
        net.config.head_dim = new_head_dim;
        let head = net.layers.last_mut().expect("head present");
        *head = Dense::init(self.config.embed_dim, new_head_dim, Activation::Linear, rng);
        Ok(net)
    }
}
