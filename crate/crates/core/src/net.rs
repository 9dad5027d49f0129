//! Dense feed-forward classifiers with exact forward inference and
//! backpropagation.
//!
//! Networks map real vectors to labels in `1..=j` (labels are 1-based
//! throughout the crate). The backward pass is generic over the seed vector
//! applied at the logits, which lets one routine serve cross-entropy
//! gradients, per-logit Jacobian rows, and arbitrary logit combinations.
//! All arithmetic is `f64`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledSet;
use crate::error::NetError;
use crate::ClassLabel;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    /// Row-major storage, `data[r * cols + c]`.
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Matrix {
            rows: r,
            cols: c,
            data: rows.into_iter().flatten().collect(),
        }
    }

    /// Identity matrix of size `n`.
    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// `self * x` for a column vector `x` of length `cols`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        let mut out = vec![0.0; self.rows];
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            out[r] = row.iter().zip(x).map(|(w, v)| w * v).sum();
        }
        out
    }

    /// `selfᵀ * x` for a column vector `x` of length `rows`.
    pub fn tr_matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            let xr = x[r];
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * xr;
            }
        }
        out
    }
}

/// Per-layer pointwise nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Identity => z,
        }
    }

    /// Derivative at `z`. At the ReLU kink (`z == 0`) the subgradient 0 is
    /// used so the derivative is deterministic.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "relu" => Some(Activation::Relu),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// One dense layer: `a = act(W x + b)`, `W` of shape `(out, in)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// Feed-forward classifier over `1..=class_count()` labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<Layer>,
}

/// Output of a single inference: raw logits plus the decoded 1-based label.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub logits: Vec<f64>,
    pub label: ClassLabel,
}

/// Gradients of a scalar objective with respect to the input and every
/// parameter; shapes mirror the differentiated network exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBundle {
    pub input: Vec<f64>,
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl GradientBundle {
    fn zeros_like(net: &Network) -> Self {
        GradientBundle {
            input: vec![0.0; net.input_dim()],
            weights: net
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.weights.rows, l.weights.cols))
                .collect(),
            biases: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    fn add_scaled(&mut self, other: &GradientBundle, scale: f64) {
        for (a, b) in self.input.iter_mut().zip(&other.input) {
            *a += scale * b;
        }
        for (am, bm) in self.weights.iter_mut().zip(&other.weights) {
            for (a, b) in am.data.iter_mut().zip(&bm.data) {
                *a += scale * b;
            }
        }
        for (av, bv) in self.biases.iter_mut().zip(&other.biases) {
            for (a, b) in av.iter_mut().zip(bv) {
                *a += scale * b;
            }
        }
    }
}

/// Smallest 0-based index attaining the maximum value.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Decodes logits into the 1-based label with lowest-index tie-break.
pub fn argmax_label(logits: &[f64]) -> ClassLabel {
    argmax(logits) + 1
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

struct ForwardTrace {
    /// `activations[0]` is the input; `activations[l + 1]` the output of layer `l`.
    activations: Vec<Vec<f64>>,
    /// `preacts[l]` is `W_l a_l + b_l` before the nonlinearity.
    preacts: Vec<Vec<f64>>,
}

impl Network {
    pub fn input_dim(&self) -> usize {
        self.layers
            .first()
            .map_or(0, |l| l.weights.cols)
    }

    pub fn class_count(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weights.rows)
    }

    /// Checks the structural invariants: at least one layer, composing
    /// shapes, final width ≥ 2, and finite parameters.
    pub fn validate(&self) -> Result<(), NetError> {
        if self.layers.is_empty() {
            return Err(NetError::Invalid("network has no layers".into()));
        }
        let mut width = self.input_dim();
        if width == 0 {
            return Err(NetError::Invalid("input dimension must be positive".into()));
        }
        for (idx, layer) in self.layers.iter().enumerate() {
            if layer.weights.cols != width {
                return Err(NetError::Invalid(format!(
                    "layer {idx} expects input width {width}, has {} columns",
                    layer.weights.cols
                )));
            }
            if layer.bias.len() != layer.weights.rows {
                return Err(NetError::Invalid(format!(
                    "layer {idx} bias length {} does not match {} rows",
                    layer.bias.len(),
                    layer.weights.rows
                )));
            }
            if layer
                .weights
                .data
                .iter()
                .chain(&layer.bias)
                .any(|v| !v.is_finite())
            {
                return Err(NetError::Invalid(format!(
                    "layer {idx} contains non-finite parameters"
                )));
            }
            width = layer.weights.rows;
        }
        if width < 2 {
            return Err(NetError::Invalid(format!(
                "class count must be at least 2, got {width}"
            )));
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<(), NetError> {
        if x.len() != self.input_dim() {
            return Err(NetError::ShapeMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn forward_trace(&self, x: &[f64]) -> ForwardTrace {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut preacts = Vec::with_capacity(self.layers.len());
        activations.push(x.to_vec());
        for layer in &self.layers {
            let mut z = layer.weights.matvec(activations.last().expect("nonempty"));
            for (zi, b) in z.iter_mut().zip(&layer.bias) {
                *zi += b;
            }
            let a = z.iter().map(|&v| layer.activation.apply(v)).collect();
            preacts.push(z);
            activations.push(a);
        }
        ForwardTrace {
            activations,
            preacts,
        }
    }

    /// Exact composition of the layers; the label is the argmax of the
    /// logits with lowest-index tie-break.
    pub fn forward(&self, x: &[f64]) -> Result<Prediction, NetError> {
        self.check_input(x)?;
        let trace = self.forward_trace(x);
        let logits = trace.activations.into_iter().last().expect("nonempty");
        let label = argmax_label(&logits);
        Ok(Prediction { logits, label })
    }

    /// Convenience wrapper returning only the decoded label.
    pub fn classify(&self, x: &[f64]) -> Result<ClassLabel, NetError> {
        Ok(self.forward(x)?.label)
    }

    /// Backpropagates an arbitrary gradient seed applied at the logits and
    /// returns the exact gradients of `seed · logits` with respect to the
    /// input and all parameters.
    fn backward(&self, trace: &ForwardTrace, dlogits: &[f64]) -> GradientBundle {
        let mut weights = Vec::with_capacity(self.layers.len());
        let mut biases = Vec::with_capacity(self.layers.len());
        let mut delta = dlogits.to_vec();
        // Walk layers from the output back to the input.
        let mut input = Vec::new();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            for (d, z) in delta.iter_mut().zip(&trace.preacts[l]) {
                *d *= layer.activation.derivative(*z);
            }
            let below = &trace.activations[l];
            let mut wgrad = Matrix::zeros(layer.weights.rows, layer.weights.cols);
            for r in 0..wgrad.rows {
                let dr = delta[r];
                let row = &mut wgrad.data[r * wgrad.cols..(r + 1) * wgrad.cols];
                for (g, a) in row.iter_mut().zip(below) {
                    *g = dr * a;
                }
            }
            let propagated = layer.weights.tr_matvec(&delta);
            weights.push(wgrad);
            biases.push(delta);
            if l == 0 {
                input = propagated;
                delta = Vec::new();
            } else {
                delta = propagated;
            }
        }
        weights.reverse();
        biases.reverse();
        GradientBundle {
            input,
            weights,
            biases,
        }
    }

    /// Logits together with the gradient of `coeffs · logits` with respect
    /// to the input. With `coeffs = e_k` this is the k-th Jacobian row;
    /// linear combinations (e.g. margin objectives) come for free.
    pub fn logit_combination_gradient(
        &self,
        x: &[f64],
        coeffs: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>), NetError> {
        self.check_input(x)?;
        if coeffs.len() != self.class_count() {
            return Err(NetError::ShapeMismatch {
                expected: self.class_count(),
                got: coeffs.len(),
            });
        }
        let trace = self.forward_trace(x);
        let bundle = self.backward(&trace, coeffs);
        let logits = trace.activations.into_iter().last().expect("nonempty");
        Ok((logits, bundle.input))
    }

    /// Cross-entropy loss `−log softmax(logits)[label]` and its exact
    /// analytic gradients with respect to the input and every parameter.
    pub fn loss_and_gradients(
        &self,
        x: &[f64],
        label: ClassLabel,
    ) -> Result<(f64, GradientBundle), NetError> {
        self.check_input(x)?;
        let classes = self.class_count();
        if label < 1 || label > classes {
            return Err(NetError::LabelOutOfRange { label, classes });
        }
        let trace = self.forward_trace(x);
        let logits = trace.activations.last().expect("nonempty");
        let probs = softmax(logits);
        let loss = -probs[label - 1].max(f64::MIN_POSITIVE).ln();
        let mut dlogits = probs;
        dlogits[label - 1] -= 1.0;
        let bundle = self.backward(&trace, &dlogits);
        Ok((loss, bundle))
    }

    /// Gradient of the cross-entropy loss with respect to the input only.
    pub fn input_gradient(&self, x: &[f64], label: ClassLabel) -> Result<Vec<f64>, NetError> {
        Ok(self.loss_and_gradients(x, label)?.1.input)
    }
}

/// Training hyper-parameters for [`train_classifier`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

/// A trained network together with its training-set accuracy and final loss.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub network: Network,
    pub accuracy: f64,
    pub final_loss: f64,
}

/// Builds a seeded Xavier-uniform initialization for the given shape. Hidden
/// layers use ReLU; the output layer is linear.
pub fn init_network(input_dim: usize, hidden: &[usize], classes: usize, seed: u64) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut widths = vec![input_dim];
    widths.extend_from_slice(hidden);
    widths.push(classes);
    let layers = widths
        .windows(2)
        .enumerate()
        .map(|(idx, w)| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut weights = Matrix::zeros(fan_out, fan_in);
            for v in weights.data.iter_mut() {
                *v = rng.random_range(-limit..limit);
            }
            let activation = if idx + 1 == widths.len() - 1 {
                Activation::Identity
            } else {
                Activation::Relu
            };
            Layer {
                weights,
                bias: vec![0.0; fan_out],
                activation,
            }
        })
        .collect();
    Network { layers }
}

/// Trains a dense classifier by full-batch gradient descent on the mean
/// cross-entropy. Deterministic for a fixed seed; `epochs = 0` returns the
/// seeded initialization unchanged.
pub fn train_classifier(
    data: &LabeledSet,
    hidden: &[usize],
    classes: usize,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, NetError> {
    if data.is_empty() {
        return Err(NetError::Invalid("training set is empty".into()));
    }
    for (_, label) in data.iter() {
        if *label < 1 || *label > classes {
            return Err(NetError::LabelOutOfRange {
                label: *label,
                classes,
            });
        }
    }
    let input_dim = data.dim();
    let mut net = init_network(input_dim, hidden, classes, cfg.seed);
    let inv_n = 1.0 / data.len() as f64;
    let mut last_loss = f64::NAN;
    for epoch in 0..cfg.epochs {
        let mut total = GradientBundle::zeros_like(&net);
        let mut loss_sum = 0.0;
        for (x, label) in data.iter() {
            let (loss, bundle) = net.loss_and_gradients(x, *label)?;
            loss_sum += loss;
            total.add_scaled(&bundle, inv_n);
        }
        last_loss = loss_sum * inv_n;
        if !last_loss.is_finite() {
            return Err(NetError::TrainingDiverged { epoch });
        }
        for (layer, (wg, bg)) in net
            .layers
            .iter_mut()
            .zip(total.weights.iter().zip(&total.biases))
        {
            for (w, g) in layer.weights.data.iter_mut().zip(&wg.data) {
                *w -= cfg.learning_rate * g;
            }
            for (b, g) in layer.bias.iter_mut().zip(bg) {
                *b -= cfg.learning_rate * g;
            }
        }
    }
    let mut correct = 0usize;
    for (x, label) in data.iter() {
        if net.forward(x)?.label == *label {
            correct += 1;
        }
    }
    Ok(TrainOutcome {
        accuracy: correct as f64 / data.len() as f64,
        final_loss: last_loss,
        network: net,
    })
}
