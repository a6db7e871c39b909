//! Dense-network training kernel.
//!
//! Small fully connected classifiers/regressors over f64: rectifier hidden
//! layers, linear output, softmax posteriors, Adam training. Shadow models,
//! stolen surrogates, attack classifiers, and inversion models are all
//! instances of [`Model`].
//!
//! Every operation here is a pure function of its inputs and seeds. Two
//! calls with identical arguments produce bit-identical results; that is a
//! contract, not an accident, and the tests hold it.

mod artifact;
mod matrix;
mod train;

pub use artifact::{decode_model, encode_model, read_model, write_model, ArtifactError, MODEL_FORMAT_VERSION};
pub use matrix::Matrix;
pub use train::{train, AdamState};

use crate::rng::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid layer shape: {0}")]
    InvalidShape(String),
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: String,
    },
    #[error("targets do not match loss kind: {0}")]
    TargetMismatch(String),
    #[error("non-finite value encountered during {0}")]
    NonFinite(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("layer index {index} out of range for {layers} layers (hidden layers are 1..={max})")]
    LayerOutOfRange {
        index: usize,
        layers: usize,
        max: usize,
    },
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },
}

/// A fully connected network. `layer_sizes[0]` is the input width, the last
/// entry is the output width; everything between is a rectifier hidden
/// layer. The output layer is linear and [`forward`] attaches a softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    layer_sizes: Vec<usize>,
    /// `weights[l]` has shape `(layer_sizes[l], layer_sizes[l + 1])`.
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
    seed: u64,
}

impl Model {
    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_width(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    /// Direct parameter access, for tests that hand-craft models.
    pub fn weights_mut(&mut self) -> &mut [Matrix] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.biases
    }

    pub fn param_count(&self) -> usize {
        self.weights
            .iter()
            .map(|w| w.rows() * w.cols())
            .sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub(crate) fn from_parts(
        layer_sizes: Vec<usize>,
        weights: Vec<Matrix>,
        biases: Vec<Vec<f64>>,
        seed: u64,
    ) -> Self {
        Model {
            layer_sizes,
            weights,
            biases,
            seed,
        }
    }

    /// Visits every parameter mutably with its flat index, weights first
    /// then biases, in layer order.
    pub fn apply_update(&mut self, f: impl FnMut(&mut f64, usize)) {
        let mut f = f;
        let mut k = 0;
        for w in &mut self.weights {
            for v in w.data_mut() {
                f(v, k);
                k += 1;
            }
        }
        for b in &mut self.biases {
            for v in b {
                f(v, k);
                k += 1;
            }
        }
    }
}

/// Targets for one batch; the variant must match the requested loss.
#[derive(Debug, Clone)]
pub enum Targets {
    /// Class indices, for hard cross-entropy and for evaluation.
    Classes(Vec<usize>),
    /// Per-row probability vectors (rows sum to 1), for soft cross-entropy.
    Soft(Matrix),
    /// Real-valued regression targets, for mean squared error.
    Values(Matrix),
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Matrix,
    pub targets: Targets,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row subset, preserving target alignment.
    pub fn select(&self, indices: &[usize]) -> Batch {
        let inputs = self.inputs.select_rows(indices);
        let targets = match &self.targets {
            Targets::Classes(c) => Targets::Classes(indices.iter().map(|&i| c[i]).collect()),
            Targets::Soft(m) => Targets::Soft(m.select_rows(indices)),
            Targets::Values(m) => Targets::Values(m.select_rows(indices)),
        };
        Batch { inputs, targets }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    HardCe,
    SoftCe,
    Mse,
}

/// Training hyperparameters. Adam moment constants are the conventional
/// 0.9 / 0.999 with epsilon 1e-8.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub loss_kind: LossKind,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self, dataset_len: usize) -> Result<(), NnError> {
        if !(self.learning_rate > 0.0) {
            return Err(NnError::InvalidConfig(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(NnError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.batch_size > dataset_len {
            return Err(NnError::InvalidConfig(format!(
                "batch_size {} exceeds dataset size {}",
                self.batch_size, dataset_len
            )));
        }
        if self.epochs == 0 {
            return Err(NnError::InvalidConfig("epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// Everything `forward` produces for one batch of inputs.
#[derive(Debug, Clone)]
pub struct Forward {
    /// Post-rectifier activation of each hidden layer, in order.
    pub hidden: Vec<Matrix>,
    pub logits: Matrix,
    /// Row-wise softmax of the logits.
    pub posteriors: Matrix,
}

/// Parameter-shaped gradient container.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(model: &Model) -> Self {
        Gradients {
            weights: model
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            biases: model.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn for_each(&self, mut f: impl FnMut(f64, usize)) {
        let mut k = 0;
        for w in &self.weights {
            for &v in w.data() {
                f(v, k);
                k += 1;
            }
        }
        for b in &self.biases {
            for &v in b {
                f(v, k);
                k += 1;
            }
        }
    }
}

/// Deterministic scaled-uniform initialization (zero biases). The same
/// `(layer_sizes, seed)` pair always yields bit-identical parameters.
pub fn init_model(layer_sizes: &[usize], seed: u64) -> Result<Model, NnError> {
    if layer_sizes.len() < 2 {
        return Err(NnError::InvalidShape(format!(
            "need at least 2 layers, got {}",
            layer_sizes.len()
        )));
    }
    if layer_sizes.iter().any(|&s| s == 0) {
        return Err(NnError::InvalidShape("layer sizes must be >= 1".into()));
    }
    let mut rng = Rng::seed_from(seed);
    let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
    let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
    for l in 0..layer_sizes.len() - 1 {
        let (fan_in, fan_out) = (layer_sizes[l], layer_sizes[l + 1]);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut w = Matrix::zeros(fan_in, fan_out);
        for v in w.data_mut() {
            *v = rng.range_f64(-limit, limit);
        }
        weights.push(w);
        biases.push(vec![0.0; fan_out]);
    }
    Ok(Model {
        layer_sizes: layer_sizes.to_vec(),
        weights,
        biases,
        seed,
    })
}

fn check_input_width(model: &Model, inputs: &Matrix, context: &str) -> Result<(), NnError> {
    if inputs.cols() != model.input_width() {
        return Err(NnError::DimensionMismatch {
            expected: model.input_width(),
            got: inputs.cols(),
            context: context.into(),
        });
    }
    Ok(())
}

/// Runs the network on a batch. Hidden activations are retained so that
/// embeddings can be read back out; posteriors are the row-wise softmax of
/// the (linear) output layer.
pub fn forward(model: &Model, inputs: &Matrix) -> Result<Forward, NnError> {
    check_input_width(model, inputs, "forward")?;
    let n_weight_layers = model.weights.len();
    let mut hidden = Vec::with_capacity(n_weight_layers.saturating_sub(1));
    let mut current = inputs.clone();
    for (l, (w, b)) in model.weights.iter().zip(&model.biases).enumerate() {
        let mut out = Matrix::zeros(current.rows(), w.cols());
        for i in 0..current.rows() {
            let xin = current.row(i);
            let orow = out.row_mut(i);
            orow.copy_from_slice(b);
            for (j, &x) in xin.iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                let wrow = w.row(j);
                for (o, &wv) in orow.iter_mut().zip(wrow) {
                    *o += x * wv;
                }
            }
        }
        let last = l == n_weight_layers - 1;
        if !last {
            for v in out.data_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            hidden.push(out.clone());
        }
        current = out;
    }
    let logits = current;
    if !logits.is_finite() {
        return Err(NnError::NonFinite("forward pass".into()));
    }
    let posteriors = softmax_rows(&logits);
    Ok(Forward {
        hidden,
        logits,
        posteriors,
    })
}

fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Log-softmax of one logit row, numerically stable.
fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - max - log_sum).collect()
}

fn validate_targets(model: &Model, batch: &Batch, loss_kind: LossKind) -> Result<(), NnError> {
    let c = model.output_width();
    let n = batch.inputs.rows();
    if n == 0 {
        return Err(NnError::EmptyDataset);
    }
    match (&batch.targets, loss_kind) {
        (Targets::Classes(labels), LossKind::HardCe) => {
            if labels.len() != n {
                return Err(NnError::TargetMismatch(format!(
                    "{} labels for {} inputs",
                    labels.len(),
                    n
                )));
            }
            if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
                return Err(NnError::TargetMismatch(format!(
                    "class index {bad} out of range for {c} classes"
                )));
            }
            Ok(())
        }
        (Targets::Soft(t), LossKind::SoftCe) => {
            if t.rows() != n || t.cols() != c {
                return Err(NnError::TargetMismatch(format!(
                    "soft targets are {}x{}, expected {}x{}",
                    t.rows(),
                    t.cols(),
                    n,
                    c
                )));
            }
            for (i, row) in t.iter_rows().enumerate() {
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() > 1e-6 {
                    return Err(NnError::TargetMismatch(format!(
                        "soft target row {i} sums to {s}, expected 1"
                    )));
                }
            }
            Ok(())
        }
        (Targets::Values(t), LossKind::Mse) => {
            if t.rows() != n || t.cols() != c {
                return Err(NnError::TargetMismatch(format!(
                    "regression targets are {}x{}, expected {}x{}",
                    t.rows(),
                    t.cols(),
                    n,
                    c
                )));
            }
            Ok(())
        }
        _ => Err(NnError::TargetMismatch(
            "target variant does not match loss kind".into(),
        )),
    }
}

/// Loss and full-batch gradients.
///
/// Cross-entropy losses are computed against the softmax posteriors; MSE is
/// computed directly on the linear output. MSE is the mean over all output
/// elements, cross-entropies are means over rows.
pub fn loss_and_grads(
    model: &Model,
    batch: &Batch,
    loss_kind: LossKind,
) -> Result<(f64, Gradients), NnError> {
    validate_targets(model, batch, loss_kind)?;
    let fwd = forward(model, &batch.inputs)?;
    let n = batch.inputs.rows();
    let c = model.output_width();

    // Loss and gradient w.r.t. the logits.
    let mut dlogits = Matrix::zeros(n, c);
    let mut loss = 0.0;
    match (&batch.targets, loss_kind) {
        (Targets::Classes(labels), LossKind::HardCe) => {
            for i in 0..n {
                let logp = log_softmax_row(fwd.logits.row(i));
                loss -= logp[labels[i]];
                let drow = dlogits.row_mut(i);
                for (j, d) in drow.iter_mut().enumerate() {
                    let p = logp[j].exp();
                    *d = (p - if j == labels[i] { 1.0 } else { 0.0 }) / n as f64;
                }
            }
            loss /= n as f64;
        }
        (Targets::Soft(t), LossKind::SoftCe) => {
            for i in 0..n {
                let logp = log_softmax_row(fwd.logits.row(i));
                let trow = t.row(i);
                for (j, &tv) in trow.iter().enumerate() {
                    if tv != 0.0 {
                        loss -= tv * logp[j];
                    }
                }
                let drow = dlogits.row_mut(i);
                for (j, d) in drow.iter_mut().enumerate() {
                    *d = (logp[j].exp() - trow[j]) / n as f64;
                }
            }
            loss /= n as f64;
        }
        (Targets::Values(t), LossKind::Mse) => {
            let denom = (n * c) as f64;
            for i in 0..n {
                let zrow = fwd.logits.row(i);
                let trow = t.row(i);
                let drow = dlogits.row_mut(i);
                for j in 0..c {
                    let diff = zrow[j] - trow[j];
                    loss += diff * diff;
                    drow[j] = 2.0 * diff / denom;
                }
            }
            loss /= denom;
        }
        _ => unreachable!("validated above"),
    }
    if !loss.is_finite() {
        return Err(NnError::NonFinite("loss computation".into()));
    }

    // Backpropagate through the stack.
    let mut grads = Gradients::zeros_like(model);
    let mut delta = dlogits; // gradient w.r.t. the current layer's pre-activation output
    for l in (0..model.weights.len()).rev() {
        let layer_input: &Matrix = if l == 0 {
            &batch.inputs
        } else {
            &fwd.hidden[l - 1]
        };
        // dW = input^T * delta; db = column sums of delta.
        let gw = &mut grads.weights[l];
        for i in 0..layer_input.rows() {
            let xin = layer_input.row(i);
            let drow = delta.row(i);
            for (j, &x) in xin.iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                let gwrow = gw.row_mut(j);
                for (g, &d) in gwrow.iter_mut().zip(drow) {
                    *g += x * d;
                }
            }
        }
        let gb = &mut grads.biases[l];
        for i in 0..delta.rows() {
            for (g, &d) in gb.iter_mut().zip(delta.row(i)) {
                *g += d;
            }
        }
        if l > 0 {
            // delta_prev = (delta * W^T) ⊙ relu'(hidden)
            let w = &model.weights[l];
            let h = &fwd.hidden[l - 1];
            let mut prev = Matrix::zeros(delta.rows(), w.rows());
            for i in 0..delta.rows() {
                let drow = delta.row(i);
                let hrow = h.row(i);
                let prow = prev.row_mut(i);
                for (j, p) in prow.iter_mut().enumerate() {
                    if hrow[j] > 0.0 {
                        let wrow = w.row(j);
                        let mut acc = 0.0;
                        for (&d, &wv) in drow.iter().zip(wrow) {
                            acc += d * wv;
                        }
                        *p = acc;
                    }
                }
            }
            delta = prev;
        }
    }
    for gw in &grads.weights {
        if !gw.is_finite() {
            return Err(NnError::NonFinite("gradient computation".into()));
        }
    }
    Ok((loss, grads))
}

/// Classification accuracy: exact correct/total counting, argmax with
/// first-index tie-break.
pub fn evaluate(model: &Model, inputs: &Matrix, labels: &[usize]) -> Result<f64, NnError> {
    if inputs.rows() == 0 {
        return Err(NnError::EmptyDataset);
    }
    if labels.len() != inputs.rows() {
        return Err(NnError::TargetMismatch(format!(
            "{} labels for {} inputs",
            labels.len(),
            inputs.rows()
        )));
    }
    let fwd = forward(model, inputs)?;
    let mut correct = 0usize;
    for (i, &label) in labels.iter().enumerate() {
        if argmax(fwd.posteriors.row(i)) == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / labels.len() as f64)
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Post-rectifier activation of hidden layer `layer_index` (1-based over
/// `layer_sizes`; the output layer is not a valid embedding source).
/// `None` selects the penultimate layer.
pub fn embed(model: &Model, inputs: &Matrix, layer_index: Option<usize>) -> Result<Matrix, NnError> {
    let n_layers = model.layer_sizes.len();
    let max_hidden = n_layers - 2; // layer_sizes index of the last hidden layer
    if max_hidden == 0 {
        return Err(NnError::LayerOutOfRange {
            index: layer_index.unwrap_or(0),
            layers: n_layers,
            max: 0,
        });
    }
    let idx = layer_index.unwrap_or(max_hidden);
    if idx == 0 || idx > max_hidden {
        return Err(NnError::LayerOutOfRange {
            index: idx,
            layers: n_layers,
            max: max_hidden,
        });
    }
    let fwd = forward(model, inputs)?;
    Ok(fwd.hidden[idx - 1].clone())
}
