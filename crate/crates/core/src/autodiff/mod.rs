//! Reverse-mode differentiation over dense tensors, plus finite-difference
//! Hessian-vector products built from two gradient evaluations.

mod gemm;
mod tape;

pub use tape::{Gradients, Tape, Var};

use crate::tensor::Tensor;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("backward needs a scalar root, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("non-finite gradient at the {sign}ε perturbation")]
    NonFiniteGradient { sign: char },
    #[error("finite-difference step must be positive, got {0}")]
    BadStep(f64),
    #[error("direction has length {got}, expected {expected}")]
    DirectionLength { expected: usize, got: usize },
}

/// Default central-difference step: `1e-4 · (1 + ‖θ‖∞)`.
pub fn default_step(theta: &[f64]) -> f64 {
    let inf = theta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    1e-4 * (1.0 + inf)
}

/// `(∇L(θ + εv) − ∇L(θ − εv)) / 2ε`, an estimate of `H·v`.
///
/// `grad` evaluates `∇L` at a point. The error is `O(ε²)`; quadratics are exact
/// up to rounding.
pub fn hvp_fd<E>(
    mut grad: impl FnMut(&[f64]) -> Result<Vec<f64>, E>,
    theta: &[f64],
    direction: &[f64],
    eps: f64,
) -> Result<Vec<f64>, E>
where
    E: From<AutodiffError>,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(AutodiffError::BadStep(eps).into());
    }
    if direction.len() != theta.len() {
        return Err(AutodiffError::DirectionLength { expected: theta.len(), got: direction.len() }.into());
    }
    let shifted = |sign: f64| -> Vec<f64> {
        theta.iter().zip(direction).map(|(t, v)| t + sign * eps * v).collect()
    };
    let plus = grad(&shifted(1.0))?;
    if !plus.iter().all(|g| g.is_finite()) {
        return Err(AutodiffError::NonFiniteGradient { sign: '+' }.into());
    }
    let minus = grad(&shifted(-1.0))?;
    if !minus.iter().all(|g| g.is_finite()) {
        return Err(AutodiffError::NonFiniteGradient { sign: '-' }.into());
    }
    Ok(plus.iter().zip(&minus).map(|(p, m)| (p - m) / (2.0 * eps)).collect())
}

/// Gradient of a scalar function of a flat parameter vector, via one tape.
pub fn gradient(
    f: impl Fn(&mut Tape, Var) -> Result<Var, AutodiffError>,
    theta: &[f64],
) -> Result<(f64, Vec<f64>), AutodiffError> {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::from_vec(&[theta.len()], theta.to_vec()));
    let root = f(&mut tape, x)?;
    let value = tape.value(root).item();
    let mut grads = tape.backward(root)?;
    Ok((value, grads.take(x).into_data()))
}
