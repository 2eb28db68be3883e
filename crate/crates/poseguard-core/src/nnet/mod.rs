//! Minimal trainable-network substrate shared by the failure predictor, the
//! attribution classifier and the reconstruction model: dense layers,
//! pointwise nonlinearities, set pooling, losses, seeded initialization and
//! deterministic gradient-based training.

mod train;
mod weights;

pub use train::{train, LossTag, MixingSchedule, MixingStage, TrainConfig, TrainReport, VectorDataset};
pub use weights::{LayerRecord, NetworkRecord, WeightDoc, WEIGHT_FORMAT_VERSION};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnetError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },
    #[error("weight file error: {0}")]
    WeightFile(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Softmax,
}

impl Activation {
    fn apply(self, z: &mut [f64]) {
        match self {
            Activation::Identity => {}
            Activation::Relu => {
                for v in z.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            Activation::Sigmoid => {
                for v in z.iter_mut() {
                    *v = 1.0 / (1.0 + (-*v).exp());
                }
            }
            Activation::Softmax => {
                let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for v in z.iter_mut() {
                    *v = (*v - max).exp();
                    sum += *v;
                }
                for v in z.iter_mut() {
                    *v /= sum;
                }
            }
        }
    }

    /// Jacobian-vector product dL/dz given the post-activation values `a`
    /// and upstream dL/da.
    fn backprop(self, a: &[f64], upstream: &[f64], out: &mut [f64]) {
        match self {
            Activation::Identity => out.copy_from_slice(upstream),
            Activation::Relu => {
                for i in 0..a.len() {
                    out[i] = if a[i] > 0.0 { upstream[i] } else { 0.0 };
                }
            }
            Activation::Sigmoid => {
                for i in 0..a.len() {
                    out[i] = upstream[i] * a[i] * (1.0 - a[i]);
                }
            }
            Activation::Softmax => {
                let dot: f64 = a.iter().zip(upstream).map(|(y, g)| y * g).sum();
                for i in 0..a.len() {
                    out[i] = a[i] * (upstream[i] - dot);
                }
            }
        }
    }
}

/// One dense layer: `weights` is row-major (out_dim × in_dim).
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    fn forward_into(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.out_dim {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.bias[o];
            for (w, x) in row.iter().zip(input) {
                acc += w * x;
            }
            out.push(acc);
        }
        self.activation.apply(out);
    }
}

/// Feed-forward network with seeded initialization. Weights initialize
/// uniformly in ±√(6 / (fan_in + fan_out)); biases start at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
    pub init_seed: u64,
}

impl Network {
    /// `dims` chains layer sizes (`[in, h1, ..., out]`); `activations` has
    /// one entry per layer.
    pub fn new(dims: &[usize], activations: &[Activation], seed: u64) -> Network {
        assert!(dims.len() >= 2, "need at least one layer");
        assert_eq!(dims.len() - 1, activations.len(), "one activation per layer");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(activations.len());
        for (k, &act) in activations.iter().enumerate() {
            let (fan_in, fan_out) = (dims[k], dims[k + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weights = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-limit..limit))
                .collect();
            layers.push(Layer {
                in_dim: fan_in,
                out_dim: fan_out,
                weights,
                bias: vec![0.0; fan_out],
                activation: act,
            });
        }
        Network { layers, init_seed: seed }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn check_input(&self, input: &[f64]) -> Result<(), NnetError> {
        if input.len() != self.input_dim() {
            return Err(NnetError::DimensionMismatch(format!(
                "input length {} but network expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NnetError> {
        self.check_input(input)?;
        let mut current = input.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            layer.forward_into(&current, &mut next);
            std::mem::swap(&mut current, &mut next);
        }
        Ok(current)
    }

    /// Forward pass that keeps every post-activation for a later backward
    /// pass.
    pub fn forward_trace(&self, input: &[f64]) -> Result<ForwardTrace, NnetError> {
        self.check_input(input)?;
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut current = input.to_vec();
        for layer in &self.layers {
            let mut out = Vec::new();
            layer.forward_into(&current, &mut out);
            activations.push(out.clone());
            current = out;
        }
        Ok(ForwardTrace { input: input.to_vec(), activations })
    }

    /// Exact reverse-mode gradients of `Σ upstream_i · forward(input)_i`
    /// with respect to every parameter, plus the gradient w.r.t. the input.
    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<NetworkGrad, NnetError> {
        let trace = self.forward_trace(input)?;
        self.backward_from_trace(&trace, upstream)
    }

    pub fn backward_from_trace(
        &self,
        trace: &ForwardTrace,
        upstream: &[f64],
    ) -> Result<NetworkGrad, NnetError> {
        if upstream.len() != self.output_dim() {
            return Err(NnetError::DimensionMismatch(format!(
                "upstream length {} but network outputs {}",
                upstream.len(),
                self.output_dim()
            )));
        }
        let mut grad = NetworkGrad::zeros_like(self);
        let mut upstream_vec = upstream.to_vec();
        let mut delta = Vec::new();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let a = &trace.activations[k];
            delta.resize(layer.out_dim, 0.0);
            layer.activation.backprop(a, &upstream_vec, &mut delta);
            let prev: &[f64] = if k == 0 { &trace.input } else { &trace.activations[k - 1] };
            let lg = &mut grad.layers[k];
            for o in 0..layer.out_dim {
                let d = delta[o];
                lg.bias[o] += d;
                let row = &mut lg.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (w, x) in row.iter_mut().zip(prev) {
                    *w += d * x;
                }
            }
            // dL/d(prev) = Wᵀ delta
            let mut prev_grad = vec![0.0; layer.in_dim];
            for o in 0..layer.out_dim {
                let d = delta[o];
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (pg, w) in prev_grad.iter_mut().zip(row) {
                    *pg += d * w;
                }
            }
            upstream_vec = prev_grad;
        }
        grad.input = upstream_vec;
        Ok(grad)
    }

    /// One gradient-descent step: parameters -= lr · grad.
    pub fn apply_gradient(&mut self, grad: &NetworkGrad, lr: f64) {
        for (layer, lg) in self.layers.iter_mut().zip(&grad.layers) {
            for (w, g) in layer.weights.iter_mut().zip(&lg.weights) {
                *w -= lr * g;
            }
            for (b, g) in layer.bias.iter_mut().zip(&lg.bias) {
                *b -= lr * g;
            }
        }
    }

    pub fn all_weights_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }
}

/// Cached post-activations from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub input: Vec<f64>,
    pub activations: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("network has layers")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Parameter gradients for one network plus the input gradient, so
/// composite models can chain backward passes.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGrad {
    pub layers: Vec<LayerGrad>,
    pub input: Vec<f64>,
}

impl NetworkGrad {
    pub fn zeros_like(net: &Network) -> NetworkGrad {
        NetworkGrad {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
            input: vec![0.0; net.input_dim()],
        }
    }

    pub fn add_assign(&mut self, other: &NetworkGrad) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            for x in &mut l.weights {
                *x *= s;
            }
            for x in &mut l.bias {
                *x *= s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }
}

/// Coordinatewise max over a non-empty set of equal-length vectors.
pub fn pool_max(set: &[Vec<f64>]) -> Result<Vec<f64>, NnetError> {
    Ok(pool_max_argmax(set)?.0)
}

/// Max pooling that also returns, per coordinate, the index of the vector
/// that attained the max (ties to the lowest index) — needed to route
/// gradients back through the pool.
pub fn pool_max_argmax(set: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<usize>), NnetError> {
    let first = set.first().ok_or_else(|| NnetError::InvalidInput("empty set".into()))?;
    let dim = first.len();
    let mut out = first.clone();
    let mut arg = vec![0usize; dim];
    for (i, v) in set.iter().enumerate().skip(1) {
        if v.len() != dim {
            return Err(NnetError::DimensionMismatch("ragged pooling set".into()));
        }
        for d in 0..dim {
            if v[d] > out[d] {
                out[d] = v[d];
                arg[d] = i;
            }
        }
    }
    Ok((out, arg))
}

/// Coordinatewise mean over a non-empty set of equal-length vectors.
pub fn pool_mean(set: &[Vec<f64>]) -> Result<Vec<f64>, NnetError> {
    let first = set.first().ok_or_else(|| NnetError::InvalidInput("empty set".into()))?;
    let dim = first.len();
    let mut out = vec![0.0; dim];
    for v in set {
        if v.len() != dim {
            return Err(NnetError::DimensionMismatch("ragged pooling set".into()));
        }
        for d in 0..dim {
            out[d] += v[d];
        }
    }
    let inv = 1.0 / set.len() as f64;
    for v in &mut out {
        *v *= inv;
    }
    Ok(out)
}

const PROB_EPS: f64 = 1e-12;

/// Binary cross-entropy; returns (loss, dL/dpred). Predictions clamp to
/// (ε, 1−ε) before the log.
pub fn bce_loss(pred: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    assert_eq!(pred.len(), target.len());
    let mut loss = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for i in 0..pred.len() {
        let p = pred[i].clamp(PROB_EPS, 1.0 - PROB_EPS);
        let y = target[i];
        loss += -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
        grad[i] = (p - y) / (p * (1.0 - p));
    }
    (loss / pred.len() as f64, {
        let inv = 1.0 / pred.len() as f64;
        grad.iter().map(|g| g * inv).collect()
    })
}

/// Cross-entropy against a one-hot (or soft) target; returns (loss,
/// dL/dpred).
pub fn cross_entropy_loss(pred: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    assert_eq!(pred.len(), target.len());
    let mut loss = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for i in 0..pred.len() {
        let p = pred[i].clamp(PROB_EPS, 1.0);
        loss += -target[i] * p.ln();
        grad[i] = -target[i] / p;
    }
    (loss, grad)
}

/// Maximum relative error between analytic parameter/input gradients and
/// central finite differences (step `h`) of the scalar
/// `Σ upstream_i · forward(input)_i`. Relative error uses
/// |a − n| / max(|a|, |n|, 1e-8).
pub fn gradient_check(net: &Network, input: &[f64], upstream: &[f64], h: f64) -> f64 {
    let analytic = net.backward(input, upstream).expect("shapes consistent");
    let scalar = |n: &Network, x: &[f64]| -> f64 {
        n.forward(x)
            .expect("shapes consistent")
            .iter()
            .zip(upstream)
            .map(|(o, u)| o * u)
            .sum()
    };
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
    let mut worst: f64 = 0.0;
    for (k, lg) in analytic.layers.iter().enumerate() {
        for (which, len) in [(0usize, lg.weights.len()), (1usize, lg.bias.len())] {
            for idx in 0..len {
                let mut plus = net.clone();
                let mut minus = net.clone();
                {
                    let (lp, lm) = (&mut plus.layers[k], &mut minus.layers[k]);
                    if which == 0 {
                        lp.weights[idx] += h;
                        lm.weights[idx] -= h;
                    } else {
                        lp.bias[idx] += h;
                        lm.bias[idx] -= h;
                    }
                }
                let numeric = (scalar(&plus, input) - scalar(&minus, input)) / (2.0 * h);
                let a = if which == 0 { lg.weights[idx] } else { lg.bias[idx] };
                if a.abs().max(numeric.abs()) > 1e-8 {
                    worst = worst.max(rel(a, numeric));
                }
            }
        }
    }
    for i in 0..input.len() {
        let mut xp = input.to_vec();
        let mut xm = input.to_vec();
        xp[i] += h;
        xm[i] -= h;
        let numeric = (scalar(net, &xp) - scalar(net, &xm)) / (2.0 * h);
        let a = analytic.input[i];
        if a.abs().max(numeric.abs()) > 1e-8 {
            worst = worst.max(rel(a, numeric));
        }
    }
    worst
}
