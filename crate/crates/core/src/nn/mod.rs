//! Small dense/conv/LSTM layer library with hand-written backward passes.

mod conv;
mod dense;
pub mod init;
mod lstm;
mod optim;
mod tensor;

pub use conv::{Activation, Conv2d, ConvCache};
pub use dense::{concat, concat_backward, Dense};
pub use lstm::{LstmCache, LstmParams, LstmState, LstmStepGrad};
pub use optim::{clip_global_norm, rmsprop_step, sgd_step, OptimizerKind, OptimizerState};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    ShapeMismatch { op: &'static str, expected: String, got: String },
    #[error("non-finite gradient {value} in tensor {tensor} at element {element}")]
    NonFiniteGradient { tensor: usize, element: usize, value: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl NnError {
    pub(crate) fn shape(op: &'static str, expected: usize, got: usize) -> Self {
        NnError::ShapeMismatch { op, expected: expected.to_string(), got: got.to_string() }
    }
}
