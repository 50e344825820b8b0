use alloc::boxed::Box;
use alloc::string::String;

use crate::matrix::Matrix;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid shape {rows}x{cols} for {len} entries")]
    InvalidShape { rows: usize, cols: usize, len: usize },

    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("zero matrix has no polar direction")]
    ZeroDirection,

    /// The input has rank below `min(m, n)`. The polar factor is not unique;
    /// `completion` is the deterministic orthonormal completion.
    #[error("rank-deficient input (rank {rank}); completed polar factor returned")]
    DegenerateRank { rank: usize, completion: Box<Matrix> },

    #[error("Jacobi SVD did not converge after {sweeps} sweeps (off-diagonal residual {residual:e})")]
    NonConvergence { sweeps: usize, residual: f64 },

    #[error("Newton-Schulz iteration diverged at step {iteration} (norm {norm:e})")]
    Divergence { iteration: usize, norm: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("moment of order {p} is infinite for tail index {alpha}")]
    InfiniteMoment { p: f64, alpha: f64 },

    #[error("precondition violated for component {component}: {reason}")]
    Precondition { component: usize, reason: String },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
