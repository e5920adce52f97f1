//! Crate-wide error type.

use thiserror::Error;

/// Unified error for model ingestion, symbolic assembly, solving, and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("polynomials belong to different variable sets")]
    VariableSetMismatch,

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("variable index {index} out of range for {nvars} variables")]
    VariableIndex { index: usize, nvars: usize },

    #[error("product of two decision polynomials is not affine in the decision variables")]
    AffineViolation,

    #[error("point length {got} does not match variable count {expected}")]
    PointLength { expected: usize, got: usize },

    #[error("exponent overflow: monomial degree exceeds u16 range")]
    ExponentOverflow,

    #[error("non-finite coefficient produced during {0}")]
    NonFinite(&'static str),

    #[error("model validation failed:\n{0}")]
    InvalidModel(String),

    #[error("{0}")]
    InvalidInput(String),

    #[error("SOS program too large: {rows} equality rows exceeds the {limit} row guard")]
    ProgramTooLarge { rows: usize, limit: usize },

    #[error("conic problem is malformed: {0}")]
    MalformedProblem(String),

    #[error("solver failed: {0}")]
    SolverFailure(String),

    #[error("SDPA parse error at line {line}: {msg}")]
    SdpaParse { line: usize, msg: String },

    #[error("trajectory aborted at t={t:.6}: {reason}")]
    TrajectoryAbort { t: f64, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
