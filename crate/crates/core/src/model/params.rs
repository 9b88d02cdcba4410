use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::ops::Range;

use super::spec::{NetworkSpec, TrainableLayer};
use super::ModelError;

/// How initial weights are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// `U(±√(6/fan_in))` weights (variance `2/fan_in`), zero biases.
    KaimingUniform,
    /// `U(±1/√fan_in)` for weights and biases alike (agent networks).
    FanInUniform,
}

/// Flat prunable weights `w` plus separately stored, never-masked biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    spec: NetworkSpec,
    layout: Vec<TrainableLayer>,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Parameters {
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Self, ModelError> {
        Self::init_with(spec, seed, InitScheme::KaimingUniform)
    }

    pub fn init_with(spec: &NetworkSpec, seed: u64, scheme: InitScheme) -> Result<Self, ModelError> {
        let layout = spec.layout()?;
        let m = layout.last().map_or(0, |l| l.weights.end);
        let nb = layout.last().map_or(0, |l| l.biases.end);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = vec![0.0; m];
        let mut biases = vec![0.0; nb];
        for layer in &layout {
            let bound = match scheme {
                InitScheme::KaimingUniform => (6.0 / layer.fan_in as f64).sqrt(),
                InitScheme::FanInUniform => 1.0 / (layer.fan_in as f64).sqrt(),
            };
            for w in &mut weights[layer.weights.clone()] {
                *w = rng.gen_range(-bound..bound);
            }
            if scheme == InitScheme::FanInUniform {
                for b in &mut biases[layer.biases.clone()] {
                    *b = rng.gen_range(-bound..bound);
                }
            }
        }
        Ok(Self { spec: spec.clone(), layout, weights, biases })
    }

    /// Wraps existing vectors, checking them against the spec's layout.
    pub fn from_parts(spec: &NetworkSpec, weights: Vec<f64>, biases: Vec<f64>) -> Result<Self, ModelError> {
        let layout = spec.layout()?;
        let m = layout.last().map_or(0, |l| l.weights.end);
        let nb = layout.last().map_or(0, |l| l.biases.end);
        if weights.len() != m || biases.len() != nb {
            return Err(ModelError::ParameterLength {
                expected: (m, nb),
                got: (weights.len(), biases.len()),
            });
        }
        Ok(Self { spec: spec.clone(), layout, weights, biases })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layout(&self) -> &[TrainableLayer] {
        &self.layout
    }

    /// Total prunable weight count `m`.
    pub fn weight_count(&self) -> usize {
        self.weights.len()
    }

    pub fn layer_ranges(&self) -> Vec<Range<usize>> {
        self.layout.iter().map(|l| l.weights.clone()).collect()
    }
}

/// Binary keep-mask over the flat weight vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    keep: Vec<bool>,
    layers: Vec<Range<usize>>,
}

impl Mask {
    pub fn ones(params: &Parameters) -> Self {
        Self { keep: vec![true; params.weight_count()], layers: params.layer_ranges() }
    }

    pub fn from_keep(params: &Parameters, keep: Vec<bool>) -> Result<Self, ModelError> {
        if keep.len() != params.weight_count() {
            return Err(ModelError::MaskLength { expected: params.weight_count(), got: keep.len() });
        }
        Ok(Self { keep, layers: params.layer_ranges() })
    }

    /// Builds a mask from 0/1 floats; any other value is rejected.
    pub fn from_f64(params: &Parameters, values: &[f64]) -> Result<Self, ModelError> {
        let keep = values
            .iter()
            .enumerate()
            .map(|(i, &v)| match v {
                1.0 => Ok(true),
                0.0 => Ok(false),
                _ => Err(ModelError::NonBinaryMask { index: i, value: v }),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_keep(params, keep)
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn get(&self, i: usize) -> bool {
        self.keep[i]
    }

    pub fn set(&mut self, i: usize, value: bool) {
        self.keep[i] = value;
    }

    pub fn layers(&self) -> &[Range<usize>] {
        &self.layers
    }

    /// `‖c‖₀`.
    pub fn count_kept(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    /// Nominal sparsity `1 − ‖c‖₀/m`.
    pub fn sparsity(&self) -> f64 {
        1.0 - self.count_kept() as f64 / self.keep.len() as f64
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.keep.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect()
    }

    /// Kept weights per trainable layer.
    pub fn layer_kept(&self) -> Vec<usize> {
        self.layers.iter().map(|r| self.keep[r.clone()].iter().filter(|&&k| k).count()).collect()
    }

    /// Fraction of each layer's weights that is kept.
    pub fn layer_retention(&self) -> Vec<f64> {
        self.layers
            .iter()
            .zip(self.layer_kept())
            .map(|(r, kept)| kept as f64 / r.len() as f64)
            .collect()
    }

    /// `c ⊙ values`.
    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        values.iter().zip(&self.keep).map(|(&v, &k)| if k { v } else { 0.0 }).collect()
    }

    /// Number of positions where two masks disagree.
    pub fn hamming(&self, other: &Mask) -> usize {
        self.keep.iter().zip(&other.keep).filter(|(a, b)| a != b).count()
    }
}
