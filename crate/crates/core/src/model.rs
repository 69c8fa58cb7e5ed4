//! Dense ReLU classifier with a softmax head and hand-written backprop.
//!
//! [`backward`] returns gradients of the mean cross-entropy with respect to
//! both the parameters (for local SGD) and the inputs (for FGSM).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::seed::rng_from;
use crate::tensor::{argmax, axpy, dot, log_sum_exp, softmax_into, ProbabilityVector, Tensor};

/// One affine layer. `weights` is `out × in`, row `o` feeding output unit `o`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Tensor,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn fan_in(&self) -> usize {
        self.weights.cols()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.rows()
    }

    fn zeros_like(&self) -> Self {
        Self { weights: Tensor::zeros(self.weights.shape().to_vec()), bias: vec![0.0; self.bias.len()] }
    }
}

/// Classifier parameters θ. Hidden layers use ReLU; the last layer feeds a
/// softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    layers: Vec<DenseLayer>,
}

impl MlpParams {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return invalid("a network needs at least one layer");
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.shape().len() != 2 || l.bias.len() != l.fan_out() {
                return invalid(format!("layer {i}: bias length does not match weight rows"));
            }
            if i > 0 && layers[i - 1].fan_out() != l.fan_in() {
                return invalid(format!("layer {i}: fan-in does not match previous fan-out"));
            }
            if !l.weights.all_finite() || l.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::Numeric(format!("layer {i} has non-finite parameters")));
            }
        }
        Ok(Self { layers })
    }

    /// All-zero parameters with the given dims.
    pub fn zeros(layer_dims: &[usize]) -> Result<Self> {
        check_dims(layer_dims)?;
        let layers = layer_dims
            .windows(2)
            .map(|w| DenseLayer { weights: Tensor::zeros(vec![w[1], w[0]]), bias: vec![0.0; w[1]] })
            .collect();
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(DenseLayer::fan_out));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn n_classes(&self) -> usize {
        self.layers.last().map(DenseLayer::fan_out).unwrap_or(0)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Flattens layer by layer: weights (row-major) then bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weights.data());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn from_flat(layer_dims: &[usize], flat: &[f64]) -> Result<Self> {
        let mut params = Self::zeros(layer_dims)?;
        if flat.len() != params.num_params() {
            return invalid(format!(
                "flat vector has {} entries, dims {layer_dims:?} need {}",
                flat.len(),
                params.num_params()
            ));
        }
        params.copy_from_flat(flat);
        Self::new(params.layers)
    }

    fn copy_from_flat(&mut self, flat: &[f64]) {
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.data_mut().copy_from_slice(&flat[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
    }

    /// `θ += delta` for a flat delta in [`Self::to_flat`] order.
    pub fn add_flat(&mut self, delta: &[f64]) -> Result<()> {
        if delta.len() != self.num_params() {
            return invalid("flat delta length does not match parameter count");
        }
        let mut at = 0;
        for l in &mut self.layers {
            for w in l.weights.data_mut() {
                *w += delta[at];
                at += 1;
            }
            for b in &mut l.bias {
                *b += delta[at];
                at += 1;
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.all_finite() && l.bias.iter().all(|b| b.is_finite()))
    }

    /// FNV-1a over the parameter bits; ties a trace to the params it came from.
    fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for l in &self.layers {
            for v in l.weights.data().iter().chain(&l.bias) {
                h ^= v.to_bits();
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

fn check_dims(layer_dims: &[usize]) -> Result<()> {
    if layer_dims.len() < 2 || layer_dims.contains(&0) {
        return invalid(format!("layer dims must be >= 2 positive sizes, got {layer_dims:?}"));
    }
    Ok(())
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(layer_dims: &[usize], seed: u64) -> Result<MlpParams> {
    let mut params = MlpParams::zeros(layer_dims)?;
    let mut rng = rng_from(seed);
    for l in &mut params.layers {
        let bound = (6.0 / (l.fan_in() + l.fan_out()) as f64).sqrt();
        for w in l.weights.data_mut() {
            *w = rng.gen_range(-bound..=bound);
        }
    }
    Ok(params)
}

/// Inputs in `[0,1]^d` with integer labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledBatch {
    inputs: Tensor,
    labels: Vec<usize>,
}

impl LabeledBatch {
    pub fn new(inputs: Tensor, labels: Vec<usize>) -> Result<Self> {
        if inputs.shape().len() != 2 {
            return invalid("batch inputs must be a matrix");
        }
        if inputs.rows() != labels.len() {
            return invalid(format!("{} input rows but {} labels", inputs.rows(), labels.len()));
        }
        if inputs.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return invalid("batch features must lie in [0, 1]");
        }
        Ok(Self { inputs, labels })
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    /// Rows selected by index, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.inputs.row(i));
            labels.push(self.labels[i]);
        }
        Self { inputs: Tensor::new(vec![indices.len(), d], data).expect("rows come from a valid batch"), labels }
    }

    /// Concatenates batches of equal width.
    pub fn concat(parts: &[&LabeledBatch]) -> Result<Self> {
        let d = parts.first().map(|b| b.dim()).unwrap_or(0);
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for b in parts {
            if b.dim() != d {
                return invalid("cannot concatenate batches of different widths");
            }
            data.extend_from_slice(b.inputs.data());
            labels.extend_from_slice(&b.labels);
        }
        Self::new(Tensor::new(vec![labels.len(), d], data)?, labels)
    }
}

/// Activations cached by [`forward`] for one batch.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    inputs: Tensor,
    /// Pre-activation `z` of every layer.
    pre: Vec<Tensor>,
    /// Post-ReLU activations of the hidden layers.
    hidden: Vec<Tensor>,
    probs: Tensor,
    fingerprint: u64,
}

impl ForwardTrace {
    pub fn logits(&self) -> &Tensor {
        self.pre.last().expect("at least one layer")
    }

    pub fn probabilities(&self) -> &Tensor {
        &self.probs
    }

    pub fn batch_size(&self) -> usize {
        self.inputs.rows()
    }
}

fn affine(layer: &DenseLayer, a: &Tensor) -> Tensor {
    let (n, out) = (a.rows(), layer.fan_out());
    let mut z = vec![0.0; n * out];
    for (i, zi) in z.chunks_exact_mut(out).enumerate() {
        let ai = a.row(i);
        for (o, zo) in zi.iter_mut().enumerate() {
            *zo = dot(layer.weights.row(o), ai) + layer.bias[o];
        }
    }
    Tensor::new(vec![n, out], z).expect("affine output of finite params")
}

fn relu(z: &Tensor) -> Tensor {
    let data = z.data().iter().map(|v| v.max(0.0)).collect();
    Tensor::new(z.shape().to_vec(), data).expect("relu keeps shape")
}

fn check_input(params: &MlpParams, inputs: &Tensor) -> Result<()> {
    if inputs.shape().len() != 2 || inputs.cols() != params.input_dim() {
        return invalid(format!(
            "input shape {:?} does not match network input dim {}",
            inputs.shape(),
            params.input_dim()
        ));
    }
    Ok(())
}

/// Logits only, without caching activations.
pub fn logits(params: &MlpParams, inputs: &Tensor) -> Result<Tensor> {
    check_input(params, inputs)?;
    let last = params.layers.len() - 1;
    let mut a = inputs.clone();
    for (l, layer) in params.layers.iter().enumerate() {
        let z = affine(layer, &a);
        a = if l < last { relu(&z) } else { z };
    }
    Ok(a)
}

/// Class probabilities for every row, row-major `n × C`.
pub fn predict_proba(params: &MlpParams, inputs: &Tensor) -> Result<Tensor> {
    let z = logits(params, inputs)?;
    let c = z.cols();
    let mut p = vec![0.0; z.len()];
    for (zi, pi) in z.data().chunks_exact(c).zip(p.chunks_exact_mut(c)) {
        softmax_into(zi, pi);
    }
    Tensor::new(z.shape().to_vec(), p)
}

pub fn forward(params: &MlpParams, inputs: &Tensor) -> Result<(Vec<ProbabilityVector>, ForwardTrace)> {
    check_input(params, inputs)?;
    let last = params.layers.len() - 1;
    let mut pre = Vec::with_capacity(params.layers.len());
    let mut hidden = Vec::with_capacity(last);
    for (l, layer) in params.layers.iter().enumerate() {
        let z = affine(layer, if l == 0 { inputs } else { &hidden[l - 1] });
        if l < last {
            hidden.push(relu(&z));
        }
        pre.push(z);
    }
    let z = &pre[last];
    let c = z.cols();
    let mut probs = vec![0.0; z.len()];
    for (zi, pi) in z.data().chunks_exact(c).zip(probs.chunks_exact_mut(c)) {
        softmax_into(zi, pi);
    }
    let probs = Tensor::new(z.shape().to_vec(), probs)?;
    let preds = probs.iter_rows().map(|r| ProbabilityVector::new(r.to_vec())).collect::<Result<Vec<_>>>()?;
    let trace = ForwardTrace { inputs: inputs.clone(), pre, hidden, probs, fingerprint: params.fingerprint() };
    Ok((preds, trace))
}

/// Gradients of the mean cross-entropy over a batch.
#[derive(Debug, Clone)]
pub struct Gradients {
    /// Shaped like the parameters that produced the trace.
    pub params: MlpParams,
    /// `batch × d`, row `i` is `∂L/∂x_i` of the mean loss.
    pub inputs: Tensor,
    pub loss: f64,
}

pub fn backward(params: &MlpParams, trace: &ForwardTrace, labels: &[usize]) -> Result<Gradients> {
    let (grads, inputs, loss) = backward_impl(params, trace, labels, true)?;
    Ok(Gradients { params: grads, inputs: inputs.expect("requested"), loss })
}

/// Parameter gradients and loss only; skips the first-layer input gradient.
pub(crate) fn backward_params(params: &MlpParams, trace: &ForwardTrace, labels: &[usize]) -> Result<(MlpParams, f64)> {
    let (grads, _, loss) = backward_impl(params, trace, labels, false)?;
    Ok((grads, loss))
}

fn backward_impl(
    params: &MlpParams,
    trace: &ForwardTrace,
    labels: &[usize],
    want_inputs: bool,
) -> Result<(MlpParams, Option<Tensor>, f64)> {
    if trace.fingerprint != params.fingerprint() || trace.pre.len() != params.layers.len() {
        return invalid("trace was not produced by these parameters");
    }
    let n = trace.batch_size();
    let c = params.n_classes();
    if labels.len() != n {
        return invalid(format!("{n} rows but {} labels", labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return invalid(format!("label {bad} out of range for {c} classes"));
    }
    if n == 0 {
        return invalid("empty batch");
    }
    let inv_n = 1.0 / n as f64;

    let logits = trace.logits();
    let mut loss = 0.0;
    // dL/dz of the head: (p − onehot(y)) / n
    let mut dz: Vec<f64> = trace.probs.data().to_vec();
    for (i, &y) in labels.iter().enumerate() {
        let zi = logits.row(i);
        loss += log_sum_exp(zi) - zi[y];
        dz[i * c + y] -= 1.0;
    }
    for v in &mut dz {
        *v *= inv_n;
    }
    loss *= inv_n;

    let mut grads: Vec<DenseLayer> = params.layers.iter().map(DenseLayer::zeros_like).collect();
    let mut input_grads = None;
    for l in (0..params.layers.len()).rev() {
        let layer = &params.layers[l];
        let (fan_in, fan_out) = (layer.fan_in(), layer.fan_out());
        let a_prev = if l == 0 { &trace.inputs } else { &trace.hidden[l - 1] };
        let g = &mut grads[l];
        for i in 0..n {
            let dzi = &dz[i * fan_out..(i + 1) * fan_out];
            let ai = a_prev.row(i);
            for (o, &d) in dzi.iter().enumerate() {
                if d != 0.0 {
                    axpy(d, ai, g.weights.row_mut(o));
                    g.bias[o] += d;
                }
            }
        }
        if l == 0 && !want_inputs {
            break;
        }
        let mut da = vec![0.0; n * fan_in];
        for (i, dai) in da.chunks_exact_mut(fan_in).enumerate() {
            for (o, &d) in dz[i * fan_out..(i + 1) * fan_out].iter().enumerate() {
                if d != 0.0 {
                    axpy(d, layer.weights.row(o), dai);
                }
            }
        }
        if l == 0 {
            input_grads = Some(Tensor::new(vec![n, fan_in], da)?);
        } else {
            // ReLU'(z) with the subgradient at 0 taken as 0.
            let z_prev = &trace.pre[l - 1];
            for (d, &z) in da.iter_mut().zip(z_prev.data()) {
                if z <= 0.0 {
                    *d = 0.0;
                }
            }
            dz = da;
        }
    }
    Ok((MlpParams { layers: grads }, input_grads, loss))
}

/// Mean cross-entropy of `params` on `batch`.
pub fn mean_loss(params: &MlpParams, batch: &LabeledBatch) -> Result<f64> {
    if batch.is_empty() {
        return invalid("empty batch");
    }
    let z = logits(params, batch.inputs())?;
    let c = params.n_classes();
    let mut loss = 0.0;
    for (zi, &y) in z.iter_rows().zip(batch.labels()) {
        if y >= c {
            return invalid(format!("label {y} out of range for {c} classes"));
        }
        loss += log_sum_exp(zi) - zi[y];
    }
    Ok(loss / batch.len() as f64)
}

/// `θ − lr · g`
pub fn sgd_step(params: &MlpParams, grads: &MlpParams, lr: f64) -> Result<MlpParams> {
    if !(lr >= 0.0) {
        return invalid(format!("learning rate must be nonnegative, got {lr}"));
    }
    if params.layer_dims() != grads.layer_dims() || params.layers.len() != grads.layers.len() {
        return invalid("gradient shape does not match parameters");
    }
    let mut next = params.clone();
    for (l, g) in next.layers.iter_mut().zip(&grads.layers) {
        axpy(-lr, g.weights.data(), l.weights.data_mut());
        axpy(-lr, &g.bias, &mut l.bias);
    }
    if !next.all_finite() {
        return Err(Error::Numeric("SGD step produced non-finite parameters".into()));
    }
    Ok(next)
}

/// Fraction of rows whose argmax prediction (lowest index on ties) equals the label.
pub fn evaluate_accuracy(params: &MlpParams, batch: &LabeledBatch) -> Result<f64> {
    if batch.is_empty() {
        return invalid("accuracy of an empty batch");
    }
    let z = logits(params, batch.inputs())?;
    let correct = z.iter_rows().zip(batch.labels()).filter(|(zi, &y)| argmax(zi) == y).count();
    Ok(correct as f64 / batch.len() as f64)
}

/// Anything that can supply `∇_x L(x, y)` for a single input.
pub trait InputGradient {
    fn input_dim(&self) -> usize;
    fn input_gradient(&self, x: &[f64], y: usize) -> Result<Vec<f64>>;
}

impl InputGradient for MlpParams {
    fn input_dim(&self) -> usize {
        MlpParams::input_dim(self)
    }

    fn input_gradient(&self, x: &[f64], y: usize) -> Result<Vec<f64>> {
        let t = Tensor::new(vec![1, x.len()], x.to_vec())?;
        let (_, trace) = forward(self, &t)?;
        Ok(backward(self, &trace, &[y])?.inputs.into_data())
    }
}
