//! Dense `f64` tensors with tape-based reverse-mode differentiation, an
//! Adam/SGD optimizer with per-group learning rates, finite-difference
//! gradient checking, and flat named-parameter checkpoints.

mod gradcheck;
mod optim;
mod params;
mod tape;
mod tensor;

use thiserror::Error;

pub use gradcheck::{grad_check, relative_error, GradCheckConfig, GradCheckReport, ParamCheck};
pub use optim::{sgd_adam_step, OptimConfig, Optimizer, OptimizerKind};
pub use params::{Checkpoint, ParamEntry, ParamGroup, ParamId, ParamStore, CHECKPOINT_FORMAT};
pub use tape::{Adjacency, BnStats, Gradients, OpKind, Tape, Var, BN_EPS};
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("target index {0} out of range for {1} classes")]
    Target(usize, usize),
    #[error("loss must be scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, DiffError>;
