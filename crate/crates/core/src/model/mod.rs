//! Masked feed-forward networks: architecture, parameters, forward graphs, checkpoints.

pub mod checkpoint;
mod forward;
mod params;
mod spec;

pub use checkpoint::{Checkpoint, CheckpointError};
pub use forward::{
    forward, forward_with, loss, loss_and_grad, path_flow, record, record_from, Differentiate, ForwardMode, Graph, LossGrad,
};
pub use params::{InitScheme, Mask, Parameters};
pub use spec::{Activation, Layer, NetworkSpec, TrainableLayer};

pub use forward::check_mask;

use crate::autodiff::AutodiffError;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid network: {0}")]
    InvalidSpec(String),
    #[error("batch shape {got:?} does not match input {expected:?}")]
    InputShape { expected: Vec<usize>, got: Vec<usize> },
    #[error("mask length {got}, expected {expected}")]
    MaskLength { expected: usize, got: usize },
    #[error("mask entry {index} is {value}, expected 0 or 1")]
    NonBinaryMask { index: usize, value: f64 },
    #[error("parameter lengths {got:?}, expected {expected:?} (weights, biases)")]
    ParameterLength { expected: (usize, usize), got: (usize, usize) },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}
