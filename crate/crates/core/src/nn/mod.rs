//! Differentiable building blocks with hand-written reverse passes.
//!
//! Every layer caches what its backward pass needs during `forward`, and
//! `backward` consumes the upstream gradient, accumulates parameter gradients
//! and returns the gradient with respect to the layer input. Calling
//! `backward` without a preceding `forward` is an error.

mod conv;
mod gradcheck;
mod layers;
mod loss;
mod param;
mod pool;

pub use conv::{gat_conv, gcn_conv, gin_conv, sage_conv, GatConv, GcnConv, GinConv, SageConv, GAT_NEGATIVE_SLOPE};
pub use gradcheck::{grad_check, GradCheckReport, GradSample, Objective};
pub use layers::{dropout, BatchNorm, Dropout, Linear, Mlp, Relu};
pub use loss::{cross_entropy, softmax_ce_backward, softmax_rows, PROB_FLOOR};
pub use param::{glorot_uniform, Module, Parameter};
pub use pool::{global_max_pool, AttentionPool, MaxPool};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("{context}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch { context: &'static str, expected: (usize, usize), found: (usize, usize) },
    #[error("graph {0} in the batch has no nodes")]
    EmptyGraphInBatch(usize),
    #[error("batch normalization in train mode needs at least two rows")]
    SingleRowTrainBatch,
    #[error("dropout rate {0} is outside [0, 1)")]
    RateOutOfRange(f64),
    #[error("label {label} at row {row} is not a valid class for {classes} columns")]
    LabelOutOfRange { row: usize, label: usize, classes: usize },
    #[error("{0}: backward called without a recorded forward pass")]
    NoForwardPass(&'static str),
    #[error("{0} produced a non-finite value")]
    NonFinite(&'static str),
    #[error(
        "gradient check failed at {param}[{index}]: analytic {analytic:e}, numeric {numeric:e}, relative error {rel_error:e} > {tolerance:e}"
    )]
    CheckFailed { param: String, index: usize, analytic: f64, numeric: f64, rel_error: f64, tolerance: f64 },
}

pub type Result<T> = std::result::Result<T, NnError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

pub(crate) fn check_shape(context: &'static str, t: &crate::Tensor, expected: (usize, usize)) -> Result<()> {
    if t.shape() == expected {
        Ok(())
    } else {
        Err(NnError::ShapeMismatch { context, expected, found: t.shape() })
    }
}

pub(crate) fn check_finite(context: &'static str, t: &crate::Tensor) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(NnError::NonFinite(context))
    }
}
