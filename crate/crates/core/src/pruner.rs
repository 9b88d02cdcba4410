//! Iterative pruning at initialization with fused metric scores.

use serde::Serialize;
use std::io::Write;
use std::sync::Arc;
use thiserror::Error;

use crate::data::Dataset;
use crate::metrics::{
    self, balanced_batch, BalancedBatch, FusionWeights, Metric, MetricError, Normalization,
};
use crate::model::{self, Mask, ModelError, Parameters};
use crate::seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PruneError {
    #[error("keep count rounds to zero for m = {m} at ratio {ratio}")]
    ZeroKeep { m: usize, ratio: f64 },
    #[error("invalid pruning config: {0}")]
    Config(String),
    #[error("non-finite fused score at weight {index}")]
    NonFiniteScore { index: usize },
    #[error("iteration {iteration}: {source}")]
    Metric { iteration: usize, source: MetricError },
    #[error("run already finished after {0} iterations")]
    Finished(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// `ρ_i = 1 − (1 − ρ_target)^(i/T)`; the endpoints are returned exactly.
pub fn schedule_ratio(i: usize, t: usize, target: f64) -> f64 {
    if i == 0 {
        0.0
    } else if i >= t {
        target
    } else {
        1.0 - (1.0 - target).powf(i as f64 / t as f64)
    }
}

/// `round(m(1 − ρ))`.
pub fn keep_count(m: usize, ratio: f64) -> usize {
    (m as f64 * (1.0 - ratio)).round() as usize
}

/// Keeps the `keep` highest scores; ties go to the lower index.
pub fn topk_keep(scores: &[f64], keep: usize) -> Result<Vec<bool>, PruneError> {
    if let Some(index) = scores.iter().position(|s| !s.is_finite()) {
        return Err(PruneError::NonFiniteScore { index });
    }
    let m = scores.len();
    let mut out = vec![false; m];
    if keep >= m {
        out.iter_mut().for_each(|k| *k = true);
        return Ok(out);
    }
    let mut order: Vec<usize> = (0..m).collect();
    let cmp = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    if keep > 0 {
        order.select_nth_unstable_by(keep - 1, cmp);
    }
    for &i in &order[..keep] {
        out[i] = true;
    }
    Ok(out)
}

/// Global top-k mask at ratio `ρ` over all weights of `params`.
pub fn topk_mask(params: &Parameters, scores: &[f64], ratio: f64) -> Result<Mask, PruneError> {
    let m = params.weight_count();
    if scores.len() != m {
        return Err(ModelError::MaskLength { expected: m, got: scores.len() }.into());
    }
    let keep = keep_count(m, ratio);
    if keep == 0 {
        return Err(PruneError::ZeroKeep { m, ratio });
    }
    Ok(Mask::from_keep(params, topk_keep(scores, keep)?)?)
}

/// Fusion weights of the hand-set schedule, by the ratio applied in the iteration.
///
/// Bands are `(0,0.8]`, `(0.8,0.9]`, `(0.9,0.98]`, `(0.98,0.99]`, `(0.99,1)`.
pub fn banded_weights(ratio: f64) -> FusionWeights {
    let (synflow, snip, grasp) = if ratio <= 0.8 {
        (0.2, 0.5, 0.3)
    } else if ratio <= 0.9 {
        (0.2, 0.4, 0.4)
    } else if ratio <= 0.98 {
        (0.2, 0.3, 0.5)
    } else if ratio <= 0.99 {
        (0.4, 0.2, 0.4)
    } else {
        (0.5, 0.0, 0.5)
    };
    FusionWeights { synflow, snip, grasp }
}

/// `ρ_e = 1 − #effective/m`.
///
/// The mask itself is used as the weight vector of the linearized network; a
/// kept weight counts as effective when `∂R/∂w > 0`, i.e. it lies on some path
/// from input to output.
pub fn effective_compression(params: &Parameters, mask: &Mask) -> Result<f64, ModelError> {
    model::check_mask(params, mask)?;
    let unit = mask.to_f64();
    let (_, grad) = model::path_flow(params, &unit)?;
    let effective = grad.iter().zip(mask.keep()).filter(|(g, &k)| k && **g > 0.0).count();
    Ok(1.0 - effective as f64 / mask.len() as f64)
}

/// Where the per-iteration fusion weights come from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FusionSchedule {
    Banded,
    Constant(FusionWeights),
}

impl FusionSchedule {
    pub fn weights(&self, ratio: f64) -> FusionWeights {
        match self {
            FusionSchedule::Banded => banded_weights(ratio),
            FusionSchedule::Constant(p) => *p,
        }
    }
}

/// Settings shared by every iterative run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub target: f64,
    pub iterations: usize,
    /// Which GraSP variant fills the third fusion slot.
    pub grasp: Metric,
    pub normalization: Normalization,
}

impl RunSettings {
    pub fn new(target: f64, iterations: usize) -> Self {
        Self { target, iterations, grasp: Metric::GraspModified, normalization: Normalization::Sum }
    }

    pub fn validate(&self) -> Result<(), PruneError> {
        if !(self.target > 0.0 && self.target < 1.0) {
            return Err(PruneError::Config(format!("target ratio {} outside (0, 1)", self.target)));
        }
        if self.iterations == 0 {
            return Err(PruneError::Config("iteration count must be at least 1".into()));
        }
        if !matches!(self.grasp, Metric::GraspModified | Metric::GraspOriginal) {
            return Err(PruneError::Config(format!("{} is not a GraSP variant", self.grasp)));
        }
        Ok(())
    }
}

/// Draws a fresh balanced batch before each iteration.
#[derive(Debug, Clone)]
pub struct Resampler {
    pub dataset: Arc<Dataset>,
    pub classes: usize,
    pub per_class: usize,
    pub seed: u64,
}

/// One iteration of a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub ratio: f64,
    pub keep: usize,
    pub p: [f64; 3],
    pub layer_retention: Vec<f64>,
    pub rho_e: f64,
    /// Loss of the pruned network on the evaluation batch.
    pub loss: f64,
    /// `‖c ⊙ ∇L‖²` of the pruned network.
    pub delta_loss: f64,
    /// Weights kept now that were masked before this iteration.
    pub resurrected: usize,
}

/// A pruning run advanced one iteration at a time.
///
/// The loss and gradient at the current mask are cached so each iteration
/// evaluates the data-dependent metrics once.
#[derive(Debug, Clone)]
pub struct PanningRun {
    params: Parameters,
    settings: RunSettings,
    batch: BalancedBatch,
    resampler: Option<Resampler>,
    mask: Mask,
    iteration: usize,
    loss: f64,
    grad: Vec<f64>,
    dense_loss: f64,
    dense_delta: f64,
    rho_e: f64,
}

fn sq_norm_masked(grad: &[f64], mask: &Mask) -> f64 {
    grad.iter().zip(mask.keep()).filter(|(_, &k)| k).map(|(g, _)| g * g).sum()
}

impl PanningRun {
    pub fn new(params: Parameters, batch: BalancedBatch, settings: RunSettings) -> Result<Self, PruneError> {
        settings.validate()?;
        let mask = Mask::ones(&params);
        let (loss, grad) =
            metrics::masked_loss_grad(&params, &mask, &batch).map_err(|source| PruneError::Metric { iteration: 0, source })?;
        let dense_delta = sq_norm_masked(&grad, &mask);
        let rho_e = effective_compression(&params, &mask)?;
        Ok(Self {
            params,
            settings,
            batch,
            resampler: None,
            mask,
            iteration: 0,
            loss,
            grad,
            dense_loss: loss,
            dense_delta,
            rho_e,
        })
    }

    pub fn with_resampler(mut self, resampler: Resampler) -> Self {
        self.resampler = Some(resampler);
        self
    }

    pub fn params(&self) -> &Parameters {
        &self.params
    }

    pub fn settings(&self) -> &RunSettings {
        &self.settings
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn into_mask(self) -> Mask {
        self.mask
    }

    /// Iterations completed so far.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn is_finished(&self) -> bool {
        self.iteration >= self.settings.iterations
    }

    /// Ratio the next call to [`step`](Self::step) will apply.
    pub fn next_ratio(&self) -> f64 {
        schedule_ratio(self.iteration + 1, self.settings.iterations, self.settings.target)
    }

    /// Ratio applied by the most recent iteration (0 before the first).
    pub fn current_ratio(&self) -> f64 {
        schedule_ratio(self.iteration, self.settings.iterations, self.settings.target)
    }

    pub fn loss(&self) -> f64 {
        self.loss
    }

    pub fn delta_loss(&self) -> f64 {
        sq_norm_masked(&self.grad, &self.mask)
    }

    pub fn dense_loss(&self) -> f64 {
        self.dense_loss
    }

    pub fn dense_delta_loss(&self) -> f64 {
        self.dense_delta
    }

    pub fn rho_e(&self) -> f64 {
        self.rho_e
    }

    /// Fused scores at the current mask for weights `p`.
    pub fn fused_scores(&self, p: &FusionWeights) -> Result<Vec<f64>, MetricError> {
        let norm = self.settings.normalization;
        let normalized = |raw: Vec<f64>| match metrics::normalize(&raw, norm) {
            Err(MetricError::AllZero) => Ok(raw),
            other => other,
        };
        let synflow = if p.synflow > 0.0 {
            Some(normalized(metrics::synflow_score(&self.params, &self.mask)?.values)?)
        } else {
            None
        };
        let snip = if p.snip > 0.0 {
            Some(normalized(metrics::snip_from_grad(&self.grad, &self.params.weights))?)
        } else {
            None
        };
        let grasp = if p.grasp > 0.0 {
            let mut raw = metrics::grasp_from_grad(&self.params, &self.mask, &self.batch, &self.grad)?;
            if self.settings.grasp == Metric::GraspModified {
                raw.iter_mut().for_each(|v| *v = v.abs());
            }
            Some(normalized(raw)?)
        } else {
            None
        };
        metrics::fuse(p, synflow.as_deref(), snip.as_deref(), grasp.as_deref())
    }

    /// Scores with `p`, prunes to the next scheduled ratio and refreshes the cache.
    pub fn step(&mut self, p: FusionWeights) -> Result<IterationRecord, PruneError> {
        if self.is_finished() {
            return Err(PruneError::Finished(self.iteration));
        }
        let i = self.iteration + 1;
        let at = |source| PruneError::Metric { iteration: i, source };
        let scores = self.fused_scores(&p).map_err(at)?;
        let ratio = self.next_ratio();
        let mask = topk_mask(&self.params, &scores, ratio)?;
        let resurrected = mask.keep().iter().zip(self.mask.keep()).filter(|(&new, &old)| new && !old).count();
        if let Some(r) = &self.resampler {
            self.batch = balanced_batch(&r.dataset, r.classes, r.per_class, seed::derive(r.seed, &format!("batch/{i}")))
                .map_err(|e| PruneError::Config(e.to_string()))?;
        }
        let (loss, grad) = metrics::masked_loss_grad(&self.params, &mask, &self.batch).map_err(at)?;
        self.mask = mask;
        self.loss = loss;
        self.grad = grad;
        self.iteration = i;
        self.rho_e = effective_compression(&self.params, &self.mask)?;
        Ok(IterationRecord {
            iteration: i,
            ratio,
            keep: self.mask.count_kept(),
            p: p.as_array(),
            layer_retention: self.mask.layer_retention(),
            rho_e: self.rho_e,
            loss: self.loss,
            delta_loss: self.delta_loss(),
            resurrected,
        })
    }
}

/// Per-iteration records of a finished run.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PruneTrace {
    pub records: Vec<IterationRecord>,
}

impl PruneTrace {
    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Full iterative run with a fixed fusion schedule.
pub fn panning(
    params: &Parameters,
    batch: &BalancedBatch,
    settings: &RunSettings,
    schedule: FusionSchedule,
) -> Result<(Mask, PruneTrace), PruneError> {
    let mut run = PanningRun::new(params.clone(), batch.clone(), settings.clone())?;
    let mut trace = PruneTrace::default();
    while !run.is_finished() {
        let p = schedule.weights(run.next_ratio());
        trace.records.push(run.step(p)?);
    }
    Ok((run.into_mask(), trace))
}

/// Iterative pruning by a single metric; `iterations = 1` is single-shot.
pub fn iterative_single_metric(
    params: &Parameters,
    batch: &BalancedBatch,
    metric: Metric,
    target: f64,
    iterations: usize,
) -> Result<(Mask, PruneTrace), PruneError> {
    let mut settings = RunSettings::new(target, iterations);
    if matches!(metric, Metric::GraspOriginal | Metric::GraspModified) {
        settings.grasp = metric;
    }
    panning(params, batch, &settings, FusionSchedule::Constant(FusionWeights::only(metric)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_classification;
    use crate::model::{Activation, NetworkSpec};

    #[test]
    fn schedule_endpoints_and_midpoint() {
        assert_eq!(schedule_ratio(0, 10, 0.96), 0.0);
        assert_eq!(schedule_ratio(10, 10, 0.96), 0.96);
        assert!((schedule_ratio(5, 10, 0.96) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn topk_examples() {
        assert_eq!(topk_keep(&[0.1, 0.5, 0.3, 0.2], 2).unwrap(), vec![false, true, true, false]);
        assert_eq!(topk_keep(&[1.0; 4], 2).unwrap(), vec![true, true, false, false]);
        assert!(topk_keep(&[1.0, f64::NAN], 1).is_err());
        let spec = NetworkSpec::mlp(&[2], &[], 2, Activation::Relu);
        let p = Parameters::init(&spec, 0).unwrap();
        assert_eq!(topk_mask(&p, &[0.1, 0.2, 0.3, 0.4], 0.0).unwrap().count_kept(), 4);
        assert!(matches!(topk_mask(&p, &[0.1, 0.2, 0.3, 0.4], 0.9), Err(PruneError::ZeroKeep { .. })));
    }

    #[test]
    fn banded_lookup() {
        assert_eq!(banded_weights(0.95).as_array(), [0.2, 0.3, 0.5]);
        assert_eq!(banded_weights(0.8).as_array(), [0.2, 0.5, 0.3]);
        assert_eq!(banded_weights(0.9).as_array(), [0.2, 0.4, 0.4]);
        assert_eq!(banded_weights(0.985).as_array(), [0.4, 0.2, 0.4]);
        assert_eq!(banded_weights(0.999).as_array(), [0.5, 0.0, 0.5]);
    }

    #[test]
    fn effective_compression_cases() {
        let spec = NetworkSpec::mlp(&[2], &[3, 3], 2, Activation::Relu);
        let p = Parameters::init(&spec, 0).unwrap();
        assert_eq!(effective_compression(&p, &Mask::ones(&p)).unwrap(), 0.0);
        let mut mask = Mask::ones(&p);
        for i in p.layout()[1].weights.clone() {
            mask.set(i, false);
        }
        assert_eq!(effective_compression(&p, &mask).unwrap(), 1.0);
    }

    #[test]
    fn effective_compression_stranded_weight() {
        // 2-2-1: hidden unit 1 has no outgoing weight, so its incoming weights are stranded.
        let spec = NetworkSpec::mlp(&[2], &[2], 1, Activation::Relu);
        let p = Parameters::init(&spec, 0).unwrap();
        // weights: w1 [2x2] = idx 0..4 (row h, col i), w2 [1x2] = idx 4..6.
        let mask = Mask::from_keep(&p, vec![true, true, true, false, true, false]).unwrap();
        // Effective: 0, 1 (h0 inputs) and 4 (h0→out). Stranded: 2 (→h1). Masked: 3, 5.
        let rho_e = effective_compression(&p, &mask).unwrap();
        assert!((rho_e - 3.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn single_iteration_matches_single_shot() {
        let d = synthetic_classification(3, 10, 6, 3.0, 1);
        let spec = NetworkSpec::mlp(&[6], &[8, 8], 3, Activation::Relu);
        let p = Parameters::init(&spec, 2).unwrap();
        let b = balanced_batch(&d, 3, 4, 0).unwrap();
        let (mask, trace) = iterative_single_metric(&p, &b, Metric::Snip, 0.7, 1).unwrap();
        let s = metrics::snip_score(&p, &Mask::ones(&p), &b).unwrap();
        assert_eq!(mask, topk_mask(&p, &s.values, 0.7).unwrap());
        assert_eq!(trace.records.len(), 1);
    }

    #[test]
    fn step_after_finish_rejected() {
        let d = synthetic_classification(2, 5, 2, 3.0, 1);
        let spec = NetworkSpec::mlp(&[2], &[4], 2, Activation::Relu);
        let p = Parameters::init(&spec, 2).unwrap();
        let b = balanced_batch(&d, 2, 2, 0).unwrap();
        let mut run = PanningRun::new(p, b, RunSettings::new(0.5, 1)).unwrap();
        run.step(banded_weights(0.5)).unwrap();
        assert!(matches!(run.step(banded_weights(0.5)), Err(PruneError::Finished(1))));
    }
}
