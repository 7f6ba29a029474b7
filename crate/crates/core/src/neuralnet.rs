//! Two-hidden-layer feed-forward classifier with hand-written backpropagation.
//!
//! The network maps `input_dim -> hidden.0 -> hidden.1 -> 2` and exposes the two
//! raw output logits `(g0, g1)`. Training uses per-sample SGD on the softmax
//! cross-entropy of those logits. Class `1` is predicted iff `g1 > g0`.
//!
//! [`Classifier`] is the read-only view the recourse code needs (logits plus the
//! loss gradient with respect to the *input*). It is implemented both by
//! [`MlpClassifier`] and by the closed-form [`LinearClassifier`].

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::seeding::stream_rng;

pub const N_LOGITS: usize = 2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output `a = f(z)`.
    #[inline]
    fn derivative_at_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub init_scale: f64,
    pub hidden_sizes: (usize, usize),
    pub activation: Activation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 5,
            seed: 0,
            init_scale: 1.0,
            hidden_sizes: (16, 16),
            activation: Activation::Tanh,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "init scale must be positive, got {}",
                self.init_scale
            )));
        }
        if self.hidden_sizes.0 == 0 || self.hidden_sizes.1 == 0 {
            return Err(Error::InvalidConfig("hidden layers must be non-empty".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

/// Fully connected layer, weights stored row-major with shape `(out_dim, in_dim)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    fn random(in_dim: usize, out_dim: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let bound = scale / (in_dim as f64).sqrt();
        let mut draw = || rng.gen_range(-bound..=bound);
        let weights = (0..in_dim * out_dim).map(|_| draw()).collect();
        let bias = (0..out_dim).map(|_| draw()).collect();
        Self {
            in_dim,
            out_dim,
            weights,
            bias,
        }
    }

    #[inline]
    fn affine_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.weights.chunks_exact(self.in_dim).zip(&self.bias))
        {
            *o = b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    /// `W^T * upstream`
    fn backward_input(&self, upstream: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.in_dim];
        for (row, u) in self.weights.chunks_exact(self.in_dim).zip(upstream) {
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * u;
            }
        }
        out
    }

    fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Parameter-shaped gradient of the training loss.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub layers: Vec<DenseLayer>,
}

impl Gradient {
    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|l| DenseLayer {
                weights: l.weights.iter().map(|w| w * factor).collect(),
                bias: l.bias.iter().map(|b| b * factor).collect(),
                ..*l
            })
            .collect();
        Self { layers }
    }
}

fn flatten_layers(layers: &[DenseLayer]) -> Vec<f64> {
    layers
        .iter()
        .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
        .collect()
}

/// Read-only differentiable two-logit classifier.
pub trait Classifier: Sync {
    fn input_dim(&self) -> usize;

    /// Raw logits `(g0, g1)`. Panics if `x.len() != input_dim()`.
    fn logits(&self, x: &[f64]) -> [f64; 2];

    /// Cross-entropy of `softmax(logits(x))` against `target` and its gradient
    /// with respect to `x`.
    fn input_gradient(&self, x: &[f64], target: u8) -> (f64, Vec<f64>);

    fn predict(&self, x: &[f64]) -> u8 {
        predict_from_logits(self.logits(x))
    }
}

/// Class `1` iff `g1 > g0`; points on the boundary count as class `0`.
#[inline]
pub fn predict_from_logits(g: [f64; 2]) -> u8 {
    u8::from(g[1] > g[0])
}

pub fn softmax(g: [f64; 2]) -> [f64; 2] {
    let m = g[0].max(g[1]);
    let e0 = (g[0] - m).exp();
    let e1 = (g[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

/// Softmax cross-entropy and its derivative with respect to the logits.
fn cross_entropy(g: [f64; 2], target: u8) -> (f64, [f64; 2]) {
    let m = g[0].max(g[1]);
    let lse = m + ((g[0] - m).exp() + (g[1] - m).exp()).ln();
    let p = softmax(g);
    let t = target as usize;
    let mut d = p;
    d[t] -= 1.0;
    (lse - g[t], d)
}

fn check_label(y: u8) -> Result<()> {
    if y > 1 {
        return Err(Error::InvalidData(format!("label must be 0 or 1, got {y}")));
    }
    Ok(())
}

fn check_finite(x: &[f64]) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric("input contains NaN or infinity".into()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpClassifier {
    layers: Vec<DenseLayer>,
    activation: Activation,
}

/// Activations of one forward pass, kept for backpropagation.
struct ForwardTrace {
    hidden1: Vec<f64>,
    hidden2: Vec<f64>,
    logits: [f64; 2],
}

impl MlpClassifier {
    /// Uniform initialization in `[-s, s]` with `s = init_scale / sqrt(fan_in)`.
    pub fn init_random(
        input_dim: usize,
        hidden_sizes: (usize, usize),
        seed: u64,
        init_scale: f64,
    ) -> Result<Self> {
        if input_dim == 0 || hidden_sizes.0 == 0 || hidden_sizes.1 == 0 {
            return Err(Error::InvalidConfig(format!(
                "layer sizes must be positive, got input {input_dim}, hidden {hidden_sizes:?}"
            )));
        }
        if !(init_scale > 0.0 && init_scale.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "init scale must be positive, got {init_scale}"
            )));
        }
        let mut rng = stream_rng(seed, 0);
        let (h1, h2) = hidden_sizes;
        let layers = vec![
            DenseLayer::random(input_dim, h1, init_scale, &mut rng),
            DenseLayer::random(h1, h2, init_scale, &mut rng),
            DenseLayer::random(h2, N_LOGITS, init_scale, &mut rng),
        ];
        Ok(Self {
            layers,
            activation: Activation::Tanh,
        })
    }

    pub fn from_config(input_dim: usize, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut model =
            Self::init_random(input_dim, cfg.hidden_sizes, cfg.seed, cfg.init_scale)?;
        model.activation = cfg.activation;
        Ok(model)
    }

    /// Builds a network from explicit layers, checking the shape chain.
    pub fn from_layers(layers: Vec<DenseLayer>, activation: Activation) -> Result<Self> {
        if layers.len() != 3 {
            return Err(Error::InvalidConfig(format!(
                "expected 3 layers (two hidden + output), got {}",
                layers.len()
            )));
        }
        for l in &layers {
            if l.in_dim == 0 || l.out_dim == 0 {
                return Err(Error::InvalidConfig("zero-sized layer".into()));
            }
            if l.weights.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
                return Err(Error::InvalidConfig(
                    "layer buffers do not match declared dimensions".into(),
                ));
            }
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::Shape {
                    expected: pair[0].out_dim,
                    got: pair[1].in_dim,
                });
            }
        }
        if layers[2].out_dim != N_LOGITS {
            return Err(Error::Shape {
                expected: N_LOGITS,
                got: layers[2].out_dim,
            });
        }
        Ok(Self { layers, activation })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn hidden_sizes(&self) -> (usize, usize) {
        (self.layers[0].out_dim, self.layers[1].out_dim)
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(DenseLayer::num_params).sum()
    }

    /// All parameters flattened layer by layer (weights then bias).
    pub fn parameters(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::Shape {
                expected: self.num_params(),
                got: params.len(),
            });
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = it.next().expect("length checked above");
            }
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn forward(&self, x: &[f64]) -> ForwardTrace {
        let [l1, l2, l3] = &self.layers[..] else {
            unreachable!("network always has three layers")
        };
        let mut hidden1 = vec![0.0; l1.out_dim];
        l1.affine_into(x, &mut hidden1);
        hidden1.iter_mut().for_each(|v| *v = self.activation.apply(*v));
        let mut hidden2 = vec![0.0; l2.out_dim];
        l2.affine_into(&hidden1, &mut hidden2);
        hidden2.iter_mut().for_each(|v| *v = self.activation.apply(*v));
        let mut logits = [0.0; 2];
        l3.affine_into(&hidden2, &mut logits);
        ForwardTrace {
            hidden1,
            hidden2,
            logits,
        }
    }

    pub fn forward_logits(&self, x: &[f64]) -> Result<(f64, f64)> {
        self.check_input(x)?;
        let g = self.forward(x).logits;
        Ok((g[0], g[1]))
    }

    /// Backpropagates `dloss/dlogits`; returns the parameter gradient and `dloss/dx`.
    fn backward(&self, x: &[f64], trace: &ForwardTrace, dlogits: [f64; 2]) -> (Gradient, Vec<f64>) {
        let act = self.activation;
        let [l1, l2, l3] = &self.layers[..] else {
            unreachable!("network always has three layers")
        };

        let mut g3 = DenseLayer::zeros(l3.in_dim, l3.out_dim);
        outer_into(&dlogits, &trace.hidden2, &mut g3.weights);
        g3.bias.copy_from_slice(&dlogits);

        let mut dz2 = l3.backward_input(&dlogits);
        for (d, a) in dz2.iter_mut().zip(&trace.hidden2) {
            *d *= act.derivative_at_output(*a);
        }
        let mut g2 = DenseLayer::zeros(l2.in_dim, l2.out_dim);
        outer_into(&dz2, &trace.hidden1, &mut g2.weights);
        g2.bias.copy_from_slice(&dz2);

        let mut dz1 = l2.backward_input(&dz2);
        for (d, a) in dz1.iter_mut().zip(&trace.hidden1) {
            *d *= act.derivative_at_output(*a);
        }
        let mut g1 = DenseLayer::zeros(l1.in_dim, l1.out_dim);
        outer_into(&dz1, x, &mut g1.weights);
        g1.bias.copy_from_slice(&dz1);

        let dx = l1.backward_input(&dz1);
        (
            Gradient {
                layers: vec![g1, g2, g3],
            },
            dx,
        )
    }

    /// Softmax cross-entropy of the two logits against `y` and its gradient with
    /// respect to every parameter.
    pub fn loss_and_gradient(&self, x: &[f64], y: u8) -> Result<(f64, Gradient)> {
        self.check_input(x)?;
        check_label(y)?;
        check_finite(x)?;
        let trace = self.forward(x);
        let (loss, dlogits) = cross_entropy(trace.logits, y);
        if !loss.is_finite() {
            return Err(Error::Numeric("loss is not finite".into()));
        }
        let (grad, _) = self.backward(x, &trace, dlogits);
        Ok((loss, grad))
    }

    /// `w -= lr * grad`
    pub fn apply_gradient(&mut self, grad: &Gradient, learning_rate: f64) -> Result<()> {
        if grad.layers.len() != self.layers.len() {
            return Err(Error::Shape {
                expected: self.layers.len(),
                got: grad.layers.len(),
            });
        }
        for (l, g) in self.layers.iter_mut().zip(&grad.layers) {
            if l.weights.len() != g.weights.len() || l.bias.len() != g.bias.len() {
                return Err(Error::Shape {
                    expected: l.num_params(),
                    got: g.num_params(),
                });
            }
            for (w, d) in l.weights.iter_mut().zip(&g.weights) {
                *w -= learning_rate * d;
            }
            for (b, d) in l.bias.iter_mut().zip(&g.bias) {
                *b -= learning_rate * d;
            }
        }
        Ok(())
    }

    /// One SGD step on a single sample. Returns the loss before the update.
    pub fn sgd_step(&mut self, x: &[f64], y: u8, learning_rate: f64) -> Result<f64> {
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be non-negative, got {learning_rate}"
            )));
        }
        let (loss, grad) = self.loss_and_gradient(x, y)?;
        self.apply_gradient(&grad, learning_rate)?;
        Ok(loss)
    }

    /// Runs `cfg.epochs` passes of per-sample SGD over `data`, reshuffling each
    /// epoch from `cfg.seed`. Zero epochs leaves the model untouched.
    pub fn train(&mut self, data: &Dataset, cfg: &TrainConfig) -> Result<()> {
        cfg.validate()?;
        self.check_input_dim(data)?;
        require_both_classes(data)?;
        let mut rng = stream_rng(cfg.seed, 1);
        let mut order: Vec<usize> = (0..data.len()).collect();
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for &i in &order {
                self.sgd_step(data.row(i), data.label(i), cfg.learning_rate)?;
            }
        }
        Ok(())
    }

    /// Fresh initialization from `cfg` followed by [`MlpClassifier::train`].
    pub fn fit(data: &Dataset, cfg: &TrainConfig) -> Result<Self> {
        let mut model = Self::from_config(data.dim(), cfg)?;
        model.train(data, cfg)?;
        Ok(model)
    }

    fn check_input_dim(&self, data: &Dataset) -> Result<()> {
        if data.dim() != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                got: data.dim(),
            });
        }
        Ok(())
    }

    pub fn predict_dataset(&self, data: &Dataset) -> Vec<u8> {
        (0..data.len()).map(|i| self.predict(data.row(i))).collect()
    }
}

fn require_both_classes(data: &Dataset) -> Result<()> {
    let (neg, pos) = data.class_counts();
    if neg == 0 || pos == 0 {
        return Err(Error::InvalidData(format!(
            "training data must contain both classes (got {neg} negatives, {pos} positives)"
        )));
    }
    Ok(())
}

fn outer_into(left: &[f64], right: &[f64], out: &mut [f64]) {
    for (row, l) in out.chunks_exact_mut(right.len()).zip(left) {
        for (o, r) in row.iter_mut().zip(right) {
            *o = l * r;
        }
    }
}

impl Classifier for MlpClassifier {
    fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    fn logits(&self, x: &[f64]) -> [f64; 2] {
        assert_eq!(x.len(), self.input_dim(), "input dimension mismatch");
        self.forward(x).logits
    }

    fn input_gradient(&self, x: &[f64], target: u8) -> (f64, Vec<f64>) {
        let trace = self.forward(x);
        let (loss, dlogits) = cross_entropy(trace.logits, target);
        let (_, dx) = self.backward(x, &trace, dlogits);
        (loss, dx)
    }
}

/// Two-logit linear model `g_k(x) = w_k . x + b_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    pub weights: [Vec<f64>; 2],
    pub bias: [f64; 2],
}

impl LinearClassifier {
    pub fn new(w0: Vec<f64>, w1: Vec<f64>, b0: f64, b1: f64) -> Result<Self> {
        if w0.len() != w1.len() {
            return Err(Error::Shape {
                expected: w0.len(),
                got: w1.len(),
            });
        }
        if w0.is_empty() {
            return Err(Error::InvalidConfig("zero-dimensional linear model".into()));
        }
        Ok(Self {
            weights: [w0, w1],
            bias: [b0, b1],
        })
    }
}

impl Classifier for LinearClassifier {
    fn input_dim(&self) -> usize {
        self.weights[0].len()
    }

    fn logits(&self, x: &[f64]) -> [f64; 2] {
        assert_eq!(x.len(), self.input_dim(), "input dimension mismatch");
        let dot = |w: &[f64]| w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        [
            dot(&self.weights[0]) + self.bias[0],
            dot(&self.weights[1]) + self.bias[1],
        ]
    }

    fn input_gradient(&self, x: &[f64], target: u8) -> (f64, Vec<f64>) {
        let (loss, d) = cross_entropy(self.logits(x), target);
        let dx = self.weights[0]
            .iter()
            .zip(&self.weights[1])
            .map(|(a, b)| d[0] * a + d[1] * b)
            .collect();
        (loss, dx)
    }
}

/// F1 score for the positive class `1`; zero when precision + recall is zero.
pub fn f1_score(y_true: &[u8], y_pred: &[u8]) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Shape {
            expected: y_true.len(),
            got: y_pred.len(),
        });
    }
    if y_true.is_empty() {
        return Err(Error::InvalidData("F1 score of an empty label set".into()));
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&t, &p) in y_true.iter().zip(y_pred) {
        match (t, p) {
            (1, 1) => tp += 1,
            (0, 1) => fp += 1,
            (1, 0) => fn_ += 1,
            _ => {}
        }
    }
    // 2PR/(P+R) == 2tp/(2tp+fp+fn); the latter has no 0/0 cases except tp=fp=fn=0.
    let denom = 2 * tp + fp + fn_;
    Ok(if tp == 0 || denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    })
}

pub fn accuracy(y_true: &[u8], y_pred: &[u8]) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Shape {
            expected: y_true.len(),
            got: y_pred.len(),
        });
    }
    if y_true.is_empty() {
        return Err(Error::InvalidData("accuracy of an empty label set".into()));
    }
    let hits = y_true.iter().zip(y_pred).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / y_true.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_net(w1: f64, b1: f64, w2: f64, b2: f64, out: [f64; 4]) -> MlpClassifier {
        MlpClassifier::from_layers(
            vec![
                DenseLayer {
                    in_dim: 1,
                    out_dim: 1,
                    weights: vec![w1],
                    bias: vec![b1],
                },
                DenseLayer {
                    in_dim: 1,
                    out_dim: 1,
                    weights: vec![w2],
                    bias: vec![b2],
                },
                DenseLayer {
                    in_dim: 1,
                    out_dim: 2,
                    weights: vec![out[0], out[1]],
                    bias: vec![out[2], out[3]],
                },
            ],
            Activation::Tanh,
        )
        .unwrap()
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = MlpClassifier::init_random(3, (8, 8), 7, 1.0).unwrap();
        let b = MlpClassifier::init_random(3, (8, 8), 7, 1.0).unwrap();
        let c = MlpClassifier::init_random(3, (8, 8), 8, 1.0).unwrap();
        assert_eq!(a.parameters(), b.parameters());
        assert_ne!(a.parameters(), c.parameters());
    }

    #[test]
    fn init_rejects_zero_sized_layers() {
        assert!(matches!(
            MlpClassifier::init_random(0, (8, 8), 7, 1.0),
            Err(Error::InvalidConfig(_))
        ));
        assert!(matches!(
            MlpClassifier::init_random(3, (0, 8), 7, 1.0),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let m = MlpClassifier::init_random(4, (9, 16), 3, 0.5).unwrap();
        for l in m.layers() {
            let bound = 0.5 / (l.in_dim as f64).sqrt();
            assert!(l.weights.iter().chain(&l.bias).all(|w| w.abs() <= bound));
        }
    }

    #[test]
    fn zero_network_outputs_zero_logits() {
        let mut m = MlpClassifier::init_random(3, (4, 5), 1, 1.0).unwrap();
        m.set_parameters(&vec![0.0; m.num_params()]).unwrap();
        assert_eq!(m.forward_logits(&[1.0, -2.0, 3.0]).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn hand_computed_forward_pass() {
        let m = tiny_net(2.0, -1.0, 0.5, 0.25, [1.5, -3.0, 0.1, 0.2]);
        let x = 0.7;
        let h1 = (2.0 * x - 1.0f64).tanh();
        let h2 = (0.5 * h1 + 0.25f64).tanh();
        let (g0, g1) = m.forward_logits(&[x]).unwrap();
        assert_relative_eq!(g0, 1.5 * h2 + 0.1, epsilon = 1e-15);
        assert_relative_eq!(g1, -3.0 * h2 + 0.2, epsilon = 1e-15);
    }

    #[test]
    fn forward_rejects_wrong_dimension() {
        let m = MlpClassifier::init_random(3, (4, 4), 1, 1.0).unwrap();
        assert!(matches!(
            m.forward_logits(&[1.0, 2.0]),
            Err(Error::Shape { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn loss_rejects_non_finite_input() {
        let m = MlpClassifier::init_random(2, (4, 4), 1, 1.0).unwrap();
        assert!(matches!(
            m.loss_and_gradient(&[f64::NAN, 0.0], 1),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn softmax_normalizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = MlpClassifier::init_random(5, (6, 6), 2, 1.0).unwrap();
        for _ in 0..20 {
            let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let (g0, g1) = m.forward_logits(&x).unwrap();
            let p = softmax([g0, g1]);
            assert_relative_eq!(p[0] + p[1], 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn output_error_vanishes_at_one_hot_optimum() {
        // Saturated logits make softmax exactly one-hot in f64.
        let m = tiny_net(1.0, 0.0, 1.0, 0.0, [0.0, 0.0, -800.0, 800.0]);
        let (loss, grad) = m.loss_and_gradient(&[0.3], 1).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.layers[2].bias.iter().all(|&b| b == 0.0));
        assert!(grad.layers[2].weights.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn output_layer_gradient_is_error_outer_hidden() {
        let m = tiny_net(0.8, 0.1, -1.2, 0.3, [0.4, -0.7, 0.05, -0.02]);
        let x = 0.9;
        let h1 = (0.8 * x + 0.1f64).tanh();
        let h2 = (-1.2 * h1 + 0.3f64).tanh();
        let g = [0.4 * h2 + 0.05, -0.7 * h2 - 0.02];
        let p = softmax(g);
        let err = [p[0] - 0.0, p[1] - 1.0];
        let (_, grad) = m.loss_and_gradient(&[x], 1).unwrap();
        assert_relative_eq!(grad.layers[2].weights[0], err[0] * h2, epsilon = 1e-14);
        assert_relative_eq!(grad.layers[2].weights[1], err[1] * h2, epsilon = 1e-14);
        assert_relative_eq!(grad.layers[2].bias[0], err[0], epsilon = 1e-14);
        assert_relative_eq!(grad.layers[2].bias[1], err[1], epsilon = 1e-14);
    }

    fn finite_difference(m: &MlpClassifier, x: &[f64], y: u8, eps: f64) -> Vec<f64> {
        let base = m.parameters();
        let mut probe = m.clone();
        (0..base.len())
            .map(|k| {
                let mut p = base.clone();
                p[k] += eps;
                probe.set_parameters(&p).unwrap();
                let up = probe.loss_and_gradient(x, y).unwrap().0;
                p[k] -= 2.0 * eps;
                probe.set_parameters(&p).unwrap();
                let down = probe.loss_and_gradient(x, y).unwrap().0;
                (up - down) / (2.0 * eps)
            })
            .collect()
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..10 {
            let m = MlpClassifier::init_random(3, (4, 5), trial, 1.5).unwrap();
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let y = rng.gen_range(0..2u8);
            let analytic = m.loss_and_gradient(&x, y).unwrap().1.flatten();
            let numeric = finite_difference(&m, &x, y, 1e-5);
            for (a, n) in analytic.iter().zip(&numeric) {
                assert!((a - n).abs() <= 1e-4 * (1.0 + a.abs()), "{a} vs {n}");
            }
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let m = MlpClassifier::init_random(3, (5, 4), 9, 1.5).unwrap();
        let x = [0.3, -1.1, 0.8];
        let (_, dx) = m.input_gradient(&x, 1);
        for k in 0..3 {
            let mut up = x;
            up[k] += 1e-6;
            let mut down = x;
            down[k] -= 1e-6;
            let fd = (m.input_gradient(&up, 1).0 - m.input_gradient(&down, 1).0) / 2e-6;
            assert_relative_eq!(dx[k], fd, epsilon = 1e-6);
        }
        let lin = LinearClassifier::new(vec![1.0, -2.0], vec![0.5, 0.3], 0.1, -0.4).unwrap();
        let xl = [0.2, 0.9];
        let (_, dxl) = lin.input_gradient(&xl, 0);
        for k in 0..2 {
            let mut up = xl;
            up[k] += 1e-6;
            let mut down = xl;
            down[k] -= 1e-6;
            let fd = (lin.input_gradient(&up, 0).0 - lin.input_gradient(&down, 0).0) / 2e-6;
            assert_relative_eq!(dxl[k], fd, epsilon = 1e-6);
        }
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let mut m = MlpClassifier::init_random(2, (3, 3), 4, 1.0).unwrap();
        let before = m.parameters();
        m.sgd_step(&[0.5, -0.5], 1, 0.0).unwrap();
        assert_eq!(m.parameters(), before);
    }

    #[test]
    fn repeated_steps_fit_a_single_point() {
        let mut m = MlpClassifier::init_random(2, (8, 8), 4, 1.0).unwrap();
        let x = [1.0, 2.0];
        for _ in 0..2000 {
            m.sgd_step(&x, 1, 0.1).unwrap();
        }
        assert!(m.loss_and_gradient(&x, 1).unwrap().0 < 1e-3);
    }

    #[test]
    fn step_and_reverse_step_restore_parameters() {
        let mut m = MlpClassifier::init_random(3, (4, 4), 4, 1.0).unwrap();
        let before = m.parameters();
        let (_, g) = m.loss_and_gradient(&[0.1, 0.2, -0.3], 0).unwrap();
        m.apply_gradient(&g, 0.05).unwrap();
        m.apply_gradient(&g.scaled(-1.0), 0.05).unwrap();
        for (a, b) in m.parameters().iter().zip(&before) {
            assert!((a - b).abs() <= 1e-15 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn small_step_does_not_increase_loss() {
        let mut m = MlpClassifier::init_random(3, (6, 6), 12, 1.0).unwrap();
        let x = [0.4, -0.2, 1.0];
        let before = m.loss_and_gradient(&x, 0).unwrap().0;
        m.sgd_step(&x, 0, 1e-3).unwrap();
        assert!(m.loss_and_gradient(&x, 0).unwrap().0 <= before);
    }

    #[test]
    fn constant_logit_shift_preserves_prediction_and_gap() {
        let m = MlpClassifier::init_random(2, (4, 4), 3, 1.0).unwrap();
        let mut shifted = m.clone();
        let mut out = shifted.layers[2].clone();
        out.bias.iter_mut().for_each(|b| *b += 3.25);
        shifted.layers[2] = out;
        for x in [[0.1, 0.2], [-1.0, 2.0], [3.0, -0.5]] {
            let (a0, a1) = m.forward_logits(&x).unwrap();
            let (b0, b1) = shifted.forward_logits(&x).unwrap();
            assert_eq!(m.predict(&x), shifted.predict(&x));
            assert_relative_eq!((a0 - a1).abs(), (b0 - b1).abs(), epsilon = 1e-12);
        }
    }

    #[test]
    fn f1_examples() {
        assert_eq!(f1_score(&[1, 0, 1], &[1, 0, 1]).unwrap(), 1.0);
        assert_eq!(f1_score(&[1, 1, 0, 0], &[1, 0, 1, 0]).unwrap(), 0.5);
        assert_eq!(f1_score(&[1, 1, 0], &[0, 0, 0]).unwrap(), 0.0);
        assert!(matches!(f1_score(&[1], &[1, 0]), Err(Error::Shape { .. })));
    }

    proptest! {
        #[test]
        fn f1_is_a_probability(pairs in prop::collection::vec((0u8..2, 0u8..2), 1..40)) {
            let (t, p): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
            let f = f1_score(&t, &p).unwrap();
            prop_assert!((0.0..=1.0).contains(&f));
        }
    }
}
