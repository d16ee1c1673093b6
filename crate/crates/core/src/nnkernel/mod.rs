//! Differentiable numeric core: tape-based reverse-mode autodiff over dense
//! 64-bit matrices, parameter storage, dense layers, Adam, and a
//! finite-difference gradient checker.

mod gradcheck;
mod layers;
mod optim;
mod params;
mod tape;

use thiserror::Error;

pub use gradcheck::{
    grad_check, relative_error, Evaluation, GradCheckReport, FD_STEP, FD_STEP_FINE, REL_FLOOR,
};
pub use layers::{Linear, Mlp};
pub use optim::{AdamConfig, AdamW};
pub use params::{ParamId, ParamStore};
pub use tape::{cholesky, Gradients, Tape, Tensor, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{op}: index {index} out of range for {len} rows")]
    Index {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("{op}: non-finite value")]
    NonFinite { op: &'static str },
    #[error("Cholesky factorization failed (matrix not positive definite after ridge)")]
    Factorization,
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss((usize, usize)),
    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
    #[error("gradient count {found} does not match parameter count {expected}")]
    GradCount { expected: usize, found: usize },
}
