//! Dense tensors, a reverse-mode tape and the Adam optimizer.
//!
//! Everything is `f64`. The tape records one forward pass and is consumed by a
//! single call to [`Tape::backward`].

mod optim;
mod tape;
mod tensor;

pub use optim::{warmup_lr, Adam, AdamState};
pub use tape::{concat_cols, concat_rows, Tape, Var};
pub(crate) use tape::softmax_row;
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("shape {shape:?} holds {} values but {len} were given", shape.iter().product::<usize>())]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("shape {shape:?} has a zero-sized dimension")]
    EmptyDimension { shape: Vec<usize> },
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("tape node {node} produced a non-finite value")]
    NonFiniteNode { node: usize },
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: index {index} out of range 0..{bound}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("{op}: {reason}")]
    Contract { op: &'static str, reason: String },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("tape has already been consumed by backward")]
    TapeConsumed,
    #[error("warm-up steps must be positive, got {0}")]
    BadWarmup(usize),
}
