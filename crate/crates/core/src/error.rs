use thiserror::Error;

/// Errors raised by the measure, divergence and solver routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("support mismatch: {left} vs {right} points")]
    SupportMismatch { left: usize, right: usize },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("empty vector")]
    EmptyVector,

    #[error("negative weight {value} at index {index}")]
    NegativeWeight { index: usize, value: f64 },

    #[error("non-finite weight {value} at index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("not a probability vector: total mass {mass}")]
    NotNormalized { mass: f64 },

    #[error("row {row} of the kernel sums to {sum}, expected 1")]
    NotRowStochastic { row: usize, sum: f64 },

    #[error("row {row} has zero mass")]
    RowOfZeroMass { row: usize },

    #[error("column {col} has zero mass")]
    ColumnOfZeroMass { col: usize },

    #[error("domain violation: {0}")]
    DomainViolation(String),

    #[error("gram matrix is not positive semidefinite (quadratic form {value})")]
    NotPsd { value: f64 },

    #[error("unsupported combination: {0}")]
    UnsupportedCombination(String),

    #[error("invalid constants: l = {l}, L = {big_l} (need L > 0 and 0 <= l <= L)")]
    InvalidConstants { l: f64, big_l: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("coupling is not of exponential form (log residual {residual:e})")]
    NotExponentialForm { residual: f64 },

    #[error("{what} did not converge (residual {residual:e})")]
    NotConverged { what: String, residual: f64 },

    #[error("oracle disagreement: {what} differ by {gap:e}")]
    OracleDisagreement { what: String, gap: f64 },

    #[error("observation {index} has positive mass but zero predicted mass")]
    UnreachableObservation { index: usize },

    #[error("size {size} exceeds the maximum of {max}")]
    SizeTooLarge { size: usize, max: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::SupportMismatch { left: a, right: b });
    }
    Ok(())
}
