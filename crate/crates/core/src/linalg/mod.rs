//! Dense linear algebra: the matrix type, thin SVD, and nuclear-norm tools.

mod matrix;
mod svd;

pub use matrix::Matrix;
pub use svd::{
    nuclear_norm, nuclear_norm_and_subgradient, nuclear_subgradient, singular_values, svd, SvdResult,
    DEFAULT_SV_THRESHOLD, MAX_SWEEPS,
};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("entry count {len} does not match shape {rows}x{cols}")]
    LengthMismatch { rows: usize, cols: usize, len: usize },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("cannot decompose an empty {rows}x{cols} matrix")]
    Empty { rows: usize, cols: usize },
    #[error("SVD of {rows}x{cols} matrix did not converge within {sweeps} sweeps")]
    NoConvergence { rows: usize, cols: usize, sweeps: usize },
    #[error("singular value threshold must be finite and non-negative, got {0}")]
    InvalidThreshold(f64),
}
