//! Per-weight saliency scores and their fusion.
//!
//! All data-dependent scores are taken with the mask applied (the loss sees
//! `c ⊙ w`) and then multiplied by the full weight value, so a weight removed
//! earlier can score high enough to come back.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use thiserror::Error;

use crate::autodiff::{default_step, hvp_fd, AutodiffError};
use crate::data::{DataError, Dataset};
use crate::model::{self, Mask, ModelError, Parameters};
use crate::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("non-finite loss on batch {batch_id}")]
    NonFiniteLoss { batch_id: u64 },
    #[error("cannot normalize: all scores are zero")]
    AllZero,
    #[error("cannot normalize: scores are constant")]
    Constant,
    #[error("score length {got}, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("fusion weights must be finite, nonnegative and not all zero: {0:?}")]
    BadFusionWeights([f64; 3]),
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<AutodiffError> for MetricError {
    fn from(e: AutodiffError) -> Self {
        MetricError::Model(ModelError::Autodiff(e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    SynFlow,
    Snip,
    /// Signed `2(Hg) ⊙ w`.
    GraspOriginal,
    /// `|2(Hg) ⊙ w|`.
    GraspModified,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::SynFlow => "synflow",
            Metric::Snip => "snip",
            Metric::GraspOriginal => "grasp-original",
            Metric::GraspModified => "grasp",
        }
    }

    pub fn needs_data(self) -> bool {
        self != Metric::SynFlow
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "synflow" => Ok(Metric::SynFlow),
            "snip" => Ok(Metric::Snip),
            "grasp" | "grasp-modified" => Ok(Metric::GraspModified),
            "grasp-original" => Ok(Metric::GraspOriginal),
            other => Err(MetricError::UnknownMetric(other.to_string())),
        }
    }
}

/// Scores for one metric, aligned with the flat weight vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyScores {
    pub metric: Metric,
    pub values: Vec<f64>,
    /// Identifier of the evaluation batch; `None` for data-free metrics.
    pub batch_id: Option<u64>,
}

/// `p₁` (SynFlow), `p₂` (SNIP), `p₃` (GraSP).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionWeights {
    pub synflow: f64,
    pub snip: f64,
    pub grasp: f64,
}

impl FusionWeights {
    pub fn new(synflow: f64, snip: f64, grasp: f64) -> Result<Self, MetricError> {
        let p = [synflow, snip, grasp];
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) || p.iter().all(|&v| v == 0.0) {
            return Err(MetricError::BadFusionWeights(p));
        }
        Ok(Self { synflow, snip, grasp })
    }

    /// All weight on one metric.
    pub fn only(metric: Metric) -> Self {
        match metric {
            Metric::SynFlow => Self { synflow: 1.0, snip: 0.0, grasp: 0.0 },
            Metric::Snip => Self { synflow: 0.0, snip: 1.0, grasp: 0.0 },
            Metric::GraspOriginal | Metric::GraspModified => Self { synflow: 0.0, snip: 0.0, grasp: 1.0 },
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.synflow, self.snip, self.grasp]
    }
}

/// How raw scores are made commensurable before fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    /// Divide by `Σ|s|`.
    #[default]
    Sum,
    /// Affine map of `[min, max]` onto `[0, 1]`.
    MinMax,
}

impl FromStr for Normalization {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sum" => Ok(Normalization::Sum),
            "minmax" | "min-max" => Ok(Normalization::MinMax),
            other => Err(format!("unknown normalization `{other}` (expected sum or minmax)")),
        }
    }
}

/// Evaluation batch holding `k` samples of each of `l` classes, class-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BalancedBatch {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub indices: Vec<usize>,
    pub id: u64,
}

/// Draws `k` distinct samples from each of the first `l` classes.
pub fn balanced_batch(dataset: &Dataset, l: usize, k: usize, seed: u64) -> Result<BalancedBatch, DataError> {
    if l > dataset.classes {
        return Err(DataError::Invalid(format!("{l} classes requested, dataset has {}", dataset.classes)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let by_class = dataset.indices_by_class();
    let mut indices = Vec::with_capacity(l * k);
    for (class, members) in by_class.iter().enumerate().take(l) {
        if members.len() < k {
            return Err(DataError::NotEnoughSamples { class, available: members.len(), requested: k });
        }
        indices.extend(members.choose_multiple(&mut rng, k).copied());
    }
    let inputs = dataset.images.gather_rows(&indices);
    let labels = indices.iter().map(|&i| dataset.labels[i]).collect();
    Ok(BalancedBatch { inputs, labels, indices, id: seed })
}

/// Mean cross-entropy and `∂L/∂w_eff` at the masked point `c ⊙ w`.
pub fn masked_loss_grad(params: &Parameters, mask: &Mask, batch: &BalancedBatch) -> Result<(f64, Vec<f64>), MetricError> {
    model::check_mask(params, mask)?;
    let w_eff = mask.apply(&params.weights);
    let lg = model::loss_and_grad(params, &w_eff, &batch.inputs, &batch.labels, false)?;
    if !lg.loss.is_finite() {
        return Err(MetricError::NonFiniteLoss { batch_id: batch.id });
    }
    Ok((lg.loss, lg.weights))
}

/// `|g ⊙ w|` for a gradient already taken at the masked point.
pub fn snip_from_grad(grad: &[f64], weights: &[f64]) -> Vec<f64> {
    grad.iter().zip(weights).map(|(g, w)| (g * w).abs()).collect()
}

pub fn snip_score(params: &Parameters, mask: &Mask, batch: &BalancedBatch) -> Result<SaliencyScores, MetricError> {
    let (_, g) = masked_loss_grad(params, mask, batch)?;
    Ok(SaliencyScores { metric: Metric::Snip, values: snip_from_grad(&g, &params.weights), batch_id: Some(batch.id) })
}

/// Signed `2(Hg) ⊙ w`, where `g = ∇L(at)` is supplied and `Hg` is estimated by
/// central differences of `grad` along `g/‖g‖` around `at`.
pub fn grasp_raw<E>(
    mut grad: impl FnMut(&[f64]) -> Result<Vec<f64>, E>,
    at: &[f64],
    g: &[f64],
    weights: &[f64],
) -> Result<Vec<f64>, E>
where
    E: From<AutodiffError>,
{
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Ok(vec![0.0; weights.len()]);
    }
    let unit: Vec<f64> = g.iter().map(|v| v / norm).collect();
    let hv = hvp_fd(&mut grad, at, &unit, default_step(at))?;
    Ok(hv.iter().zip(weights).map(|(h, w)| 2.0 * h * norm * w).collect())
}

/// GraSP raw scores given the masked-point gradient `g`.
pub fn grasp_from_grad(
    params: &Parameters,
    mask: &Mask,
    batch: &BalancedBatch,
    g: &[f64],
) -> Result<Vec<f64>, MetricError> {
    let w_eff = mask.apply(&params.weights);
    let grad = |w: &[f64]| -> Result<Vec<f64>, MetricError> {
        Ok(model::loss_and_grad(params, w, &batch.inputs, &batch.labels, false)?.weights)
    };
    grasp_raw(grad, &w_eff, g, &params.weights)
}

pub fn grasp_score(
    params: &Parameters,
    mask: &Mask,
    batch: &BalancedBatch,
    variant: Metric,
) -> Result<SaliencyScores, MetricError> {
    let (_, g) = masked_loss_grad(params, mask, batch)?;
    let mut values = grasp_from_grad(params, mask, batch, &g)?;
    let metric = match variant {
        Metric::GraspOriginal => Metric::GraspOriginal,
        _ => {
            values.iter_mut().for_each(|v| *v = v.abs());
            Metric::GraspModified
        }
    };
    Ok(SaliencyScores { metric, values, batch_id: Some(batch.id) })
}

/// `∂R/∂w_eff ⊙ |w|` on the linearized `|c ⊙ w|` network with an all-ones input.
pub fn synflow_score(params: &Parameters, mask: &Mask) -> Result<SaliencyScores, MetricError> {
    model::check_mask(params, mask)?;
    let abs_eff: Vec<f64> = mask.apply(&params.weights).iter().map(|w| w.abs()).collect();
    let (_, grad) = model::path_flow(params, &abs_eff)?;
    let values = grad.iter().zip(&params.weights).map(|(g, w)| g * w.abs()).collect();
    Ok(SaliencyScores { metric: Metric::SynFlow, values, batch_id: None })
}

pub fn normalize(scores: &[f64], how: Normalization) -> Result<Vec<f64>, MetricError> {
    match how {
        Normalization::Sum => {
            let total: f64 = scores.iter().map(|s| s.abs()).sum();
            if total == 0.0 {
                return Err(MetricError::AllZero);
            }
            Ok(scores.iter().map(|s| s / total).collect())
        }
        Normalization::MinMax => {
            let (lo, hi) = scores
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| (lo.min(s), hi.max(s)));
            if hi == lo {
                return Err(if hi == 0.0 { MetricError::AllZero } else { MetricError::Constant });
            }
            Ok(scores.iter().map(|s| (s - lo) / (hi - lo)).collect())
        }
    }
}

/// `p₁ N(S_SynFlow) + p₂ N(S_SNIP) + p₃ N(S_GraSP)` over normalized inputs.
///
/// A `None` slot stands for a metric that was not computed; its weight must be zero.
pub fn fuse(
    p: &FusionWeights,
    synflow: Option<&[f64]>,
    snip: Option<&[f64]>,
    grasp: Option<&[f64]>,
) -> Result<Vec<f64>, MetricError> {
    let parts = [(p.synflow, synflow), (p.snip, snip), (p.grasp, grasp)];
    let m = parts.iter().find_map(|(_, s)| s.map(|s| s.len())).unwrap_or(0);
    let mut out = vec![0.0; m];
    for (weight, scores) in parts {
        match scores {
            Some(s) => {
                if s.len() != m {
                    return Err(MetricError::LengthMismatch { expected: m, got: s.len() });
                }
                if weight != 0.0 {
                    out.iter_mut().zip(s).for_each(|(o, v)| *o += weight * v);
                }
            }
            None if weight != 0.0 => return Err(MetricError::LengthMismatch { expected: m, got: 0 }),
            None => {}
        }
    }
    Ok(out)
}

/// Indices of every `stride`-th weight in descending order of `baseline`.
///
/// Ties resolve to the lower flat index first, matching the pruner.
pub fn trajectory_columns(baseline: &[f64], stride: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..baseline.len()).collect();
    order.sort_by(|&a, &b| baseline[b].total_cmp(&baseline[a]).then(a.cmp(&b)));
    order.into_iter().step_by(stride.max(1)).collect()
}

/// Writes score-trajectory rows: `iteration, ratio, s[col₀], s[col₁], …`.
pub struct TrajectoryWriter<W: Write> {
    out: csv::Writer<W>,
    columns: Vec<usize>,
}

impl<W: Write> TrajectoryWriter<W> {
    pub fn new(out: W, columns: Vec<usize>) -> csv::Result<Self> {
        let mut out = csv::Writer::from_writer(out);
        let mut header = vec!["iteration".to_string(), "ratio".to_string()];
        header.extend(columns.iter().map(|c| format!("w{c}")));
        out.write_record(&header)?;
        Ok(Self { out, columns })
    }

    pub fn columns(&self) -> &[usize] {
        &self.columns
    }

    pub fn row(&mut self, iteration: usize, ratio: f64, scores: &[f64]) -> csv::Result<()> {
        let mut rec = vec![iteration.to_string(), ratio.to_string()];
        rec.extend(self.columns.iter().map(|&c| scores[c].to_string()));
        self.out.write_record(&rec)
    }

    pub fn finish(mut self) -> std::io::Result<W> {
        self.out.flush()?;
        self.out.into_inner().map_err(|e| e.into_error())
    }
}
