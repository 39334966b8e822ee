use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid axis {axis} has size {size}; sizes must be equal powers of two >= 2")]
    InvalidGrid { axis: usize, size: usize },

    #[error("invalid point set: {0}")]
    InvalidPoints(String),

    #[error(
        "{levels} levels requested but level {degenerate} already resolves every point \
         (separation {separation:.3e} below minimal point spacing {spacing:.3e})"
    )]
    TooManyLevels { levels: usize, degenerate: usize, separation: f64, spacing: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("oracle failed on measurement column {column}: {source}")]
    OracleColumn {
        column: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("conjugate gradients did not converge: relative residual {residual:.3e} after {iterations} iterations")]
    CgNotConverged { residual: f64, iterations: usize },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("nonpositive pivot {value:.3e} for basis index {index} in color {color}; increase rho")]
    NonPositivePivot { color: usize, index: usize, value: f64 },

    #[error(
        "diagonal block of supernode {supernode} in color {color} is not positive definite \
         (smallest eigenvalue <= {eigenvalue_bound:.3e}); increase rho"
    )]
    BlockNotPositiveDefinite { color: usize, supernode: usize, eigenvalue_bound: f64 },

    #[error("factor diagonal block {block} failed verification: residual {residual:.3e}")]
    DiagonalBlockCheck { block: usize, residual: f64 },

    #[error("factor has {ncols} of {n} columns; operation needs a full factor")]
    TruncatedFactor { ncols: usize, n: usize },

    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },

    #[error("matrix is not symmetric: |a[{row},{col}] - a[{col},{row}]| = {diff:.3e}")]
    NotSymmetric { row: usize, col: usize, diff: f64 },

    #[error("invalid factor file: {0}")]
    FactorFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures that signal an under-resolved `rho` or a non-SPD
    /// operator rather than bad input.
    pub fn is_spd_violation(&self) -> bool {
        match self {
            Error::NotPositiveDefinite(_)
            | Error::NonPositivePivot { .. }
            | Error::BlockNotPositiveDefinite { .. }
            | Error::DiagonalBlockCheck { .. } => true,
            Error::OracleColumn { source, .. } => source.is_spd_violation(),
            _ => false,
        }
    }
}
