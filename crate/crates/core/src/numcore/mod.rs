//! Dense `f64` tensors, a reverse-mode differentiation tape, Adam, weight
//! clipping and a central-difference gradient checker.

mod adam;
pub mod fixtures;
mod gradcheck;
mod graph;
mod params;
mod tensor;

use thiserror::Error;

pub use adam::{adam_step, AdamHyper, AdamState, Direction};
pub use gradcheck::{check_gradients, check_gradients_report, GradCheckReport};
pub use graph::{Bindings, GradientFault, Graph, NodeId, Reduction};
pub use params::{clip_params, ParamSet};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("invalid tensor shape {0:?}")]
    BadShape(Vec<usize>),
    #[error("shape {shape:?} does not match data length {len}")]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("non-finite value {value} at index {index}")]
    NonFiniteValue { index: usize, value: f64 },
    #[error("{op}: shape mismatch between {left} and {right}")]
    ShapeMismatch {
        op: &'static str,
        left: String,
        right: String,
    },
    #[error("non-finite value {value} produced by {node}")]
    Overflow { node: String, value: f64 },
    #[error("input `{0}` is not bound")]
    UnboundInput(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("{labels} labels for {node}")]
    LabelMismatch { node: String, labels: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("graph has not been evaluated")]
    NotEvaluated,
    #[error("graph has no loss node")]
    NoLoss,
    #[error("loss {0} is not a scalar")]
    NotScalar(String),
    #[error("{0}")]
    Config(String),
    #[error("tensor decode failed: {0}")]
    Decode(String),
}
