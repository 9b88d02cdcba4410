use super::params::{Mask, Parameters};
use super::spec::{Layer, NetworkSpec, TrainableLayer};
use super::ModelError;
use crate::autodiff::{Tape, Var};
use crate::tensor::Tensor;

/// `Standard` evaluates the network as built. `Linearized` replaces every
/// activation by the identity and drops biases, which is the form used for
/// data-free path-flow quantities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    Standard,
    Linearized,
}

/// Tape handles for one recorded forward pass.
#[derive(Debug)]
pub struct Graph {
    pub weights: Vec<Var>,
    pub biases: Vec<Var>,
    pub input: Var,
    pub output: Var,
}

/// Which parameter groups are recorded as differentiable leaves.
#[derive(Debug, Clone, Copy, Default)]
pub struct Differentiate {
    pub weights: bool,
    pub biases: bool,
    pub input: bool,
}

fn batch_shape(spec: &NetworkSpec, batch: &Tensor) -> Result<Vec<usize>, ModelError> {
    let per: usize = spec.input_len();
    let n = batch.shape().first().copied().unwrap_or(0);
    if batch.ndim() < 2 || n == 0 || n * per != batch.len() {
        return Err(ModelError::InputShape { expected: spec.input.clone(), got: batch.shape().to_vec() });
    }
    let mut shape = vec![n];
    shape.extend_from_slice(&spec.input);
    Ok(shape)
}

/// Records a forward pass with the given weight and bias values on `tape`.
#[allow(clippy::too_many_arguments)]
pub fn record(
    tape: &mut Tape,
    spec: &NetworkSpec,
    layout: &[TrainableLayer],
    weights: &[f64],
    biases: &[f64],
    batch: Tensor,
    mode: ForwardMode,
    diff: Differentiate,
) -> Result<Graph, ModelError> {
    let shape = batch_shape(spec, &batch)?;
    let batch = batch.reshaped(&shape).expect("checked element count");
    let input = if diff.input { tape.leaf(batch) } else { tape.constant(batch) };
    record_from(tape, spec, layout, weights, biases, input, mode, diff)
}

/// Like [`record`] but starts from a value already on the tape, which must have
/// shape `[N, input...]`.
#[allow(clippy::too_many_arguments)]
pub fn record_from(
    tape: &mut Tape,
    spec: &NetworkSpec,
    layout: &[TrainableLayer],
    weights: &[f64],
    biases: &[f64],
    input: Var,
    mode: ForwardMode,
    diff: Differentiate,
) -> Result<Graph, ModelError> {
    let got = tape.shape(input);
    if got.len() != spec.input.len() + 1 || got[1..] != spec.input[..] {
        return Err(ModelError::InputShape { expected: spec.input.clone(), got: got.to_vec() });
    }
    let mut wvars = Vec::with_capacity(layout.len());
    let mut bvars = Vec::with_capacity(layout.len());
    for l in layout {
        let w = Tensor::from_vec(&l.weight_shape, weights[l.weights.clone()].to_vec());
        wvars.push(if diff.weights { tape.leaf(w) } else { tape.constant(w) });
        let b = Tensor::from_vec(&[l.biases.len()], biases[l.biases.clone()].to_vec());
        bvars.push(if diff.biases { tape.leaf(b) } else { tape.constant(b) });
    }
    let linear = mode == ForwardMode::Linearized;
    let mut x = input;
    let mut trainable = 0;
    for layer in &spec.layers {
        x = match *layer {
            Layer::Dense { .. } => {
                let y = tape.matmul_t(x, wvars[trainable])?;
                let y = if linear { y } else { tape.add_bias(y, bvars[trainable])? };
                trainable += 1;
                y
            }
            Layer::Conv { stride, padding, .. } => {
                let y = tape.conv2d(x, wvars[trainable], stride, padding)?;
                let y = if linear { y } else { tape.add_bias(y, bvars[trainable])? };
                trainable += 1;
                y
            }
            Layer::Relu if !linear => tape.relu(x),
            Layer::Tanh if !linear => tape.tanh(x),
            Layer::Relu | Layer::Tanh => x,
            Layer::AvgPool { size } => tape.avg_pool2d(x, size)?,
            Layer::Flatten => {
                let n = tape.shape(x)[0];
                let rest: usize = tape.shape(x)[1..].iter().product();
                tape.reshape(x, &[n, rest])?
            }
        };
    }
    Ok(Graph { weights: wvars, biases: bvars, input, output: x })
}

/// Logits of the masked network `c ⊙ w` on `batch`.
pub fn forward(params: &Parameters, mask: &Mask, batch: &Tensor) -> Result<Tensor, ModelError> {
    check_mask(params, mask)?;
    let weights = mask.apply(&params.weights);
    forward_with(params, &weights, batch)
}

/// Logits with explicit effective weights (no mask applied).
pub fn forward_with(params: &Parameters, weights: &[f64], batch: &Tensor) -> Result<Tensor, ModelError> {
    let mut tape = Tape::new();
    let g = record(
        &mut tape,
        params.spec(),
        params.layout(),
        weights,
        &params.biases,
        batch.clone(),
        ForwardMode::Standard,
        Differentiate::default(),
    )?;
    Ok(tape.value(g.output).clone())
}

pub fn check_mask(params: &Parameters, mask: &Mask) -> Result<(), ModelError> {
    if mask.len() != params.weight_count() {
        return Err(ModelError::MaskLength { expected: params.weight_count(), got: mask.len() });
    }
    Ok(())
}

/// Mean cross-entropy and its gradients at a given effective weight vector.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    /// `∂L/∂w` aligned with the flat weight vector.
    pub weights: Vec<f64>,
    /// `∂L/∂b`, when requested.
    pub biases: Option<Vec<f64>>,
}

/// Cross-entropy of the network evaluated at `weights` (already masked by the
/// caller if desired), differentiated with respect to those effective weights.
pub fn loss_and_grad(
    params: &Parameters,
    weights: &[f64],
    batch: &Tensor,
    labels: &[usize],
    with_biases: bool,
) -> Result<LossGrad, ModelError> {
    let mut tape = Tape::new();
    let diff = Differentiate { weights: true, biases: with_biases, input: false };
    let g = record(
        &mut tape,
        params.spec(),
        params.layout(),
        weights,
        &params.biases,
        batch.clone(),
        ForwardMode::Standard,
        diff,
    )?;
    let loss = tape.softmax_cross_entropy(g.output, labels)?;
    let value = tape.value(loss).item();
    let mut grads = tape.backward(loss)?;
    let mut flat = Vec::with_capacity(weights.len());
    for &w in &g.weights {
        flat.extend(grads.take(w).into_data());
    }
    let biases = with_biases.then(|| {
        let mut b = Vec::with_capacity(params.biases.len());
        for &v in &g.biases {
            b.extend(grads.take(v).into_data());
        }
        b
    });
    Ok(LossGrad { loss: value, weights: flat, biases })
}

/// Mean cross-entropy of the network at `weights`, without gradients.
pub fn loss(params: &Parameters, weights: &[f64], batch: &Tensor, labels: &[usize]) -> Result<f64, ModelError> {
    let mut tape = Tape::new();
    let g = record(
        &mut tape,
        params.spec(),
        params.layout(),
        weights,
        &params.biases,
        batch.clone(),
        ForwardMode::Standard,
        Differentiate::default(),
    )?;
    let l = tape.softmax_cross_entropy(g.output, labels)?;
    Ok(tape.value(l).item())
}

/// `R = Σ outputs` of the linearized, bias-free network with the given weights on an
/// all-ones input, together with `∂R/∂w`.
pub fn path_flow(params: &Parameters, weights: &[f64]) -> Result<(f64, Vec<f64>), ModelError> {
    let spec = params.spec();
    let mut shape = vec![1];
    shape.extend_from_slice(&spec.input);
    let ones = Tensor::ones(&shape);
    let mut tape = Tape::new();
    let diff = Differentiate { weights: true, biases: false, input: false };
    let g = record(&mut tape, spec, params.layout(), weights, &params.biases, ones, ForwardMode::Linearized, diff)?;
    let r = tape.sum(g.output);
    let value = tape.value(r).item();
    let mut grads = tape.backward(r)?;
    let mut flat = Vec::with_capacity(weights.len());
    for &w in &g.weights {
        flat.extend(grads.take(w).into_data());
    }
    Ok((value, flat))
}
