//! Sparse training with SGD momentum and per-epoch cosine learning rate.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::io::Write;
use thiserror::Error;

use crate::autodiff::Tape;
use crate::data::Dataset;
use crate::model::{self, record, Differentiate, ForwardMode, Mask, ModelError, Parameters};
use crate::seed;
use crate::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("loss diverged at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub momentum: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Random crop after zero-padding by this many pixels; 0 disables.
    pub crop_padding: usize,
    /// Test accuracy every this many epochs and after the last; 0 means last only.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 80, batch: 256, momentum: 0.9, lr: 0.1, weight_decay: 1e-4, seed: 0, crop_padding: 0, eval_every: 1 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch == 0 || self.lr.is_nan() || self.lr <= 0.0 || self.momentum < 0.0 || self.weight_decay < 0.0 {
            return Err(TrainError::Config(format!("{self:?}")));
        }
        Ok(())
    }
}

/// `η₀ · ½(1 + cos(π·epoch/total))`, never negative.
pub fn cosine_lr(epoch: usize, total: usize, lr0: f64) -> f64 {
    if total == 0 {
        return lr0;
    }
    let x = std::f64::consts::PI * epoch as f64 / total as f64;
    (lr0 * 0.5 * (1.0 + x.cos())).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub train_acc: f64,
    /// Absent when no test set was given or the epoch was not evaluated.
    pub test_acc: Option<f64>,
}

/// One row per epoch; the header is written even when there are none.
pub fn write_metrics_csv(rows: &[EpochMetrics], out: impl Write) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(["epoch", "lr", "loss", "train_acc", "test_acc"])?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

fn count_correct(logits: &Tensor, labels: &[usize]) -> usize {
    let k = logits.shape()[1];
    logits.data().chunks(k).zip(labels).filter(|(row, &y)| argmax(row) == y).count()
}

/// Classification accuracy of the masked network.
pub fn evaluate(params: &Parameters, mask: &Mask, data: &Dataset) -> Result<f64, ModelError> {
    const CHUNK: usize = 1000;
    if data.is_empty() {
        return Ok(0.0);
    }
    let weights = mask.apply(&params.weights);
    let mut correct = 0;
    for start in (0..data.len()).step_by(CHUNK) {
        let end = (start + CHUNK).min(data.len());
        let logits = model::forward_with(params, &weights, &data.images.slice_rows(start, end))?;
        correct += count_correct(&logits, &data.labels[start..end]);
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Zero-pads each `[C,H,W]` sample by `pad` and crops back at a random offset.
fn random_crop(batch: &Tensor, pad: usize, rng: &mut impl Rng) -> Tensor {
    let shape = batch.shape();
    if pad == 0 || shape.len() != 4 {
        return batch.clone();
    }
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let mut out = vec![0.0; batch.len()];
    let src = batch.data();
    for s in 0..n {
        let dy = rng.gen_range(0..=2 * pad) as isize - pad as isize;
        let dx = rng.gen_range(0..=2 * pad) as isize - pad as isize;
        for ch in 0..c {
            let base = (s * c + ch) * h * w;
            for y in 0..h {
                let sy = y as isize + dy;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for x in 0..w {
                    let sx = x as isize + dx;
                    if sx >= 0 && sx < w as isize {
                        out[base + y * w + x] = src[base + sy as usize * w + sx as usize];
                    }
                }
            }
        }
    }
    Tensor::from_vec(shape, out)
}

/// Trains `c ⊙ w` with the mask held fixed. Masked weights start at and stay 0.
///
/// Zero epochs return `params` untouched, masked values included.
///
/// `on_epoch` sees each epoch's metrics as they are produced.
pub fn train_sparse(
    params: &Parameters,
    mask: &Mask,
    train: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<(Parameters, Vec<EpochMetrics>), TrainError> {
    cfg.validate()?;
    model::check_mask(params, mask)?;
    if cfg.epochs == 0 {
        return Ok((params.clone(), Vec::new()));
    }
    let mut p = params.clone();
    p.weights = mask.apply(&p.weights);
    let mut vel_w = vec![0.0; p.weights.len()];
    let mut vel_b = vec![0.0; p.biases.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, "train/shuffle"));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let keep = mask.keep();
    let mut history = Vec::with_capacity(cfg.epochs);
    let diff = Differentiate { weights: true, biases: true, input: false };
    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg.epochs, cfg.lr);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0);
        for (step, idx) in order.chunks(cfg.batch).enumerate() {
            let x = random_crop(&train.images.gather_rows(idx), cfg.crop_padding, &mut rng);
            let y: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
            let mut tape = Tape::new();
            let g = record(&mut tape, p.spec(), p.layout(), &p.weights, &p.biases, x, ForwardMode::Standard, diff)?;
            let loss = tape.softmax_cross_entropy(g.output, &y).map_err(ModelError::from)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(TrainError::Diverged { epoch, step });
            }
            correct += count_correct(tape.value(g.output), &y);
            loss_sum += value * idx.len() as f64;
            let mut grads = tape.backward(loss).map_err(ModelError::from)?;
            let gw: Vec<f64> = g.weights.iter().flat_map(|&v| grads.take(v).into_data()).collect();
            let gb: Vec<f64> = g.biases.iter().flat_map(|&v| grads.take(v).into_data()).collect();
            for i in 0..p.weights.len() {
                if !keep[i] {
                    continue;
                }
                let d = gw[i] + cfg.weight_decay * p.weights[i];
                vel_w[i] = cfg.momentum * vel_w[i] + d;
                p.weights[i] -= lr * vel_w[i];
            }
            for i in 0..p.biases.len() {
                vel_b[i] = cfg.momentum * vel_b[i] + gb[i];
                p.biases[i] -= lr * vel_b[i];
            }
        }
        let n = train.len().max(1) as f64;
        let last = epoch + 1 == cfg.epochs;
        let due = cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0;
        let test_acc = match test {
            Some(t) if last || due => Some(evaluate(&p, mask, t)?),
            _ => None,
        };
        let m = EpochMetrics { epoch: epoch + 1, lr, loss: loss_sum / n, train_acc: correct as f64 / n, test_acc };
        on_epoch(&m);
        history.push(m);
    }
    Ok((p, history))
}
