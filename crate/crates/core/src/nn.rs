//! Minimal from-scratch network core: flat parameter storage, MLP forward
//! pass, cross-entropy loss, and exact backpropagation (needed only during
//! the warm-up phase). Also exposes the layer-output descriptor consumed by
//! the cost model.
//!
//! All arithmetic is 64-bit and strictly sequential, so repeated calls with
//! identical inputs are bit-identical.

use crate::error::{Error, Result};
use crate::rng::SeedStream;

/// Dense row-major matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::Config("ragged matrix rows".into()));
            }
            data.extend_from_slice(row);
        }
        Ok(Self { rows: r, cols: c, data })
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Config(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// New matrix containing the selected rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(indices.len(), self.cols);
        for (dst, &src) in indices.iter().enumerate() {
            out.row_mut(dst).copy_from_slice(self.row(src));
        }
        out
    }
}

/// Flat real-valued model parameter vector of fixed dimension d.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(d: usize) -> Self {
        Self { values: vec![0.0; d] }
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// `self += scale * direction`. Lengths must match.
    pub fn add_scaled(&mut self, direction: &[f64], scale: f64) {
        debug_assert_eq!(self.values.len(), direction.len());
        for (w, &z) in self.values.iter_mut().zip(direction) {
            *w += scale * z;
        }
    }

    pub fn copy_from(&mut self, other: &ParamVector) {
        self.values.copy_from_slice(&other.values);
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn linf_distance(&self, other: &ParamVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Numeric(format!("non-finite entries in {what}")))
        }
    }
}

/// Fixed nonlinearity applied after every hidden layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the post-activation value.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// Multilayer-perceptron shape: input dim, hidden dims..., output dim.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    layer_widths: Vec<usize>,
    activation: Activation,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>, activation: Activation) -> Result<Self> {
        if layer_widths.len() < 2 {
            return Err(Error::Config(
                "layer_widths needs at least input and output entries".into(),
            ));
        }
        if layer_widths.contains(&0) {
            return Err(Error::Config("layer widths must be >= 1".into()));
        }
        Ok(Self { layer_widths, activation })
    }

    pub fn layer_widths(&self) -> &[usize] {
        &self.layer_widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    /// (fan_in, fan_out) per dense layer.
    pub fn layer_dims(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.layer_widths.windows(2).map(|w| (w[0], w[1]))
    }

    /// Total parameter count: sum over layers of in*out + out.
    pub fn parameter_count(&self) -> usize {
        self.layer_dims().map(|(i, o)| i * o + o).sum()
    }

    fn check_params(&self, w: &ParamVector) -> Result<()> {
        if w.len() != self.parameter_count() {
            return Err(Error::Config(format!(
                "parameter vector has length {}, spec requires {}",
                w.len(),
                self.parameter_count()
            )));
        }
        Ok(())
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.features.cols() != self.input_dim() {
            return Err(Error::Config(format!(
                "batch feature dim {} does not match input dim {}",
                batch.features.cols(),
                self.input_dim()
            )));
        }
        let classes = self.num_classes() as u32;
        if batch.labels.iter().any(|&l| l >= classes) {
            return Err(Error::Config("label out of range for output layer".into()));
        }
        Ok(())
    }
}

/// A mini-batch: feature rows plus integer class labels.
#[derive(Debug, Clone)]
pub struct Batch {
    pub features: Matrix,
    pub labels: Vec<u32>,
}

impl Batch {
    pub fn new(features: Matrix, labels: Vec<u32>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Config(format!(
                "feature rows {} != label count {}",
                features.rows(),
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::Config("batch must hold at least one sample".into()));
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Sub-batch with the selected rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Batch {
        Batch {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// One (feature maps, width, height) triple per layer output; dense layers
/// carry width = height = 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct LayerOutput {
    pub maps: u64,
    pub width: u64,
    pub height: u64,
}

impl LayerOutput {
    pub fn dense(units: u64) -> Self {
        Self { maps: units, width: 1, height: 1 }
    }

    pub fn elements(&self) -> u64 {
        self.maps * self.width * self.height
    }
}

/// Shape summary feeding the cost model: parameter count plus the output
/// dimensions of every layer.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ModelDescriptor {
    pub param_count: u64,
    pub layer_outputs: Vec<LayerOutput>,
}

impl ModelDescriptor {
    pub fn validate(&self) -> Result<()> {
        if self.param_count == 0 {
            return Err(Error::Config("descriptor param_count must be > 0".into()));
        }
        if self
            .layer_outputs
            .iter()
            .any(|l| l.maps == 0 || l.width == 0 || l.height == 0)
        {
            return Err(Error::Config("descriptor layer outputs must be positive".into()));
        }
        Ok(())
    }
}

/// Layer-output descriptor for an MLP: one (out, 1, 1) triple per layer.
pub fn descriptor_of(spec: &MlpSpec) -> ModelDescriptor {
    ModelDescriptor {
        param_count: spec.parameter_count() as u64,
        layer_outputs: spec
            .layer_dims()
            .map(|(_, out)| LayerOutput::dense(out as u64))
            .collect(),
    }
}

/// Per-layer uniform init in +-1/sqrt(fan_in), weights and biases alike.
pub fn init_params(spec: &MlpSpec, stream: &mut SeedStream) -> ParamVector {
    let mut values = Vec::with_capacity(spec.parameter_count());
    for (fan_in, fan_out) in spec.layer_dims() {
        let bound = 1.0 / (fan_in as f64).sqrt();
        for _ in 0..fan_in * fan_out + fan_out {
            values.push((stream.next_f64() * 2.0 - 1.0) * bound);
        }
    }
    ParamVector::from_vec(values)
}

/// Runs the batch through the network. Returns logits (rows = samples) and
/// the mean cross-entropy loss.
pub fn forward(spec: &MlpSpec, w: &ParamVector, batch: &Batch) -> Result<(Matrix, f64)> {
    spec.check_params(w)?;
    spec.check_batch(batch)?;
    let (logits, _) = propagate(spec, w, batch, false)?;
    let loss = cross_entropy(&logits, &batch.labels)?;
    Ok((logits, loss))
}

/// Mean cross-entropy loss only (two allocations fewer than `forward` when
/// the logits are not needed, which is the zeroth-order hot path).
pub fn loss_only(spec: &MlpSpec, w: &ParamVector, batch: &Batch) -> Result<f64> {
    let (logits, loss) = forward(spec, w, batch)?;
    drop(logits);
    Ok(loss)
}

/// Exact gradient of the mean cross-entropy loss with respect to `w`.
pub fn backward(spec: &MlpSpec, w: &ParamVector, batch: &Batch) -> Result<ParamVector> {
    spec.check_params(w)?;
    spec.check_batch(batch)?;
    let (logits, activations) = propagate(spec, w, batch, true)?;
    let bs = batch.len();
    let classes = spec.num_classes();

    // delta starts as (softmax - onehot) / batch_size.
    let mut delta = Matrix::zeros(bs, classes);
    for r in 0..bs {
        let row = logits.row(r);
        let probs = softmax_row(row);
        let drow = delta.row_mut(r);
        for c in 0..classes {
            drow[c] = probs[c] / bs as f64;
        }
        drow[batch.labels[r] as usize] -= 1.0 / bs as f64;
    }

    let mut grad = vec![0.0; spec.parameter_count()];
    let layer_offsets = offsets(spec);
    let dims: Vec<(usize, usize)> = spec.layer_dims().collect();

    for layer in (0..dims.len()).rev() {
        let (fan_in, fan_out) = dims[layer];
        let (w_off, b_off) = layer_offsets[layer];
        let input = &activations[layer]; // layer input (bs x fan_in)

        for r in 0..bs {
            let drow = delta.row(r);
            let irow = input.row(r);
            for o in 0..fan_out {
                let d = drow[o];
                if d != 0.0 {
                    let wrow = &mut grad[w_off + o * fan_in..w_off + (o + 1) * fan_in];
                    for i in 0..fan_in {
                        wrow[i] += d * irow[i];
                    }
                }
                grad[b_off + o] += d;
            }
        }

        if layer > 0 {
            let weights = &w.as_slice()[w_off..w_off + fan_in * fan_out];
            let act = spec.activation();
            let mut prev = Matrix::zeros(bs, fan_in);
            for r in 0..bs {
                let drow = delta.row(r);
                let arow = input.row(r);
                let prow = prev.row_mut(r);
                for o in 0..fan_out {
                    let d = drow[o];
                    if d != 0.0 {
                        let wrow = &weights[o * fan_in..(o + 1) * fan_in];
                        for i in 0..fan_in {
                            prow[i] += d * wrow[i];
                        }
                    }
                }
                for i in 0..fan_in {
                    prow[i] *= act.derivative_from_output(arow[i]);
                }
            }
            delta = prev;
        }
    }

    Ok(ParamVector::from_vec(grad))
}

/// Accuracy and loss on a batch (argmax prediction; ties resolve to the
/// lowest class index).
pub fn evaluate(spec: &MlpSpec, w: &ParamVector, batch: &Batch) -> Result<(f64, f64)> {
    let (logits, loss) = forward(spec, w, batch)?;
    let mut correct = 0usize;
    for r in 0..batch.len() {
        let row = logits.row(r);
        let mut best = 0usize;
        for c in 1..row.len() {
            if row[c] > row[best] {
                best = c;
            }
        }
        if best == batch.labels[r] as usize {
            correct += 1;
        }
    }
    Ok((loss, correct as f64 / batch.len() as f64))
}

/// (weight offset, bias offset) per layer within the flat vector.
fn offsets(spec: &MlpSpec) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(spec.num_layers());
    let mut cursor = 0usize;
    for (fan_in, fan_out) in spec.layer_dims() {
        out.push((cursor, cursor + fan_in * fan_out));
        cursor += fan_in * fan_out + fan_out;
    }
    out
}

/// Forward propagation. Returns logits and, when `keep_activations` is set,
/// the input matrix of every layer (index 0 is the batch features).
fn propagate(
    spec: &MlpSpec,
    w: &ParamVector,
    batch: &Batch,
    keep_activations: bool,
) -> Result<(Matrix, Vec<Matrix>)> {
    let bs = batch.len();
    let dims: Vec<(usize, usize)> = spec.layer_dims().collect();
    let layer_offsets = offsets(spec);
    let mut activations: Vec<Matrix> = Vec::new();
    let mut current = batch.features.clone();

    for (layer, &(fan_in, fan_out)) in dims.iter().enumerate() {
        let (w_off, b_off) = layer_offsets[layer];
        let weights = &w.as_slice()[w_off..w_off + fan_in * fan_out];
        let biases = &w.as_slice()[b_off..b_off + fan_out];
        let last = layer + 1 == dims.len();

        let mut next = Matrix::zeros(bs, fan_out);
        for r in 0..bs {
            let irow = current.row(r);
            let orow = next.row_mut(r);
            for o in 0..fan_out {
                let wrow = &weights[o * fan_in..(o + 1) * fan_in];
                let mut acc = biases[o];
                for i in 0..fan_in {
                    acc += wrow[i] * irow[i];
                }
                orow[o] = if last { acc } else { spec.activation().apply(acc) };
            }
        }

        if next.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite activation in layer {layer}"
            )));
        }

        if keep_activations {
            activations.push(current);
        }
        current = next;
    }

    Ok((current, activations))
}

fn softmax_row(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Mean cross-entropy via log-sum-exp with max subtraction.
fn cross_entropy(logits: &Matrix, labels: &[u32]) -> Result<f64> {
    let mut total = 0.0;
    for r in 0..logits.rows() {
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
        total += lse - row[labels[r] as usize];
    }
    let loss = total / logits.rows() as f64;
    if !loss.is_finite() {
        return Err(Error::Numeric("non-finite loss".into()));
    }
    Ok(loss)
}
