//! Dense linear algebra, probability transforms and a reverse-mode tape.

pub mod gradcheck;
pub mod matrix;
pub mod tape;

pub use gradcheck::grad_check;
pub use matrix::{cross_entropy_rows, dot, l2_normalize_rows, norm, softmax_rows, Matrix};
pub use tape::{GradTape, ParamId, Tape, Var};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumError {
    #[error("row {0} has norm below 1e-12")]
    ZeroNormRow(usize),
    #[error("row {row}: index {index} out of range for {cols} columns")]
    IndexOutOfRange { row: usize, index: usize, cols: usize },
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("expected a 1x1 value, got {0:?}")]
    NotScalar((usize, usize)),
    #[error("sequence {0} is empty")]
    EmptySequence(usize),
    #[error("finite-difference step {0} outside [1e-6, 1e-2]")]
    BadEpsilon(f64),
    #[error("loss is not deterministic: {first} then {second}")]
    NonDeterministicLoss { first: f64, second: f64 },
}
