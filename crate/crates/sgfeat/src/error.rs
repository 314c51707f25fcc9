//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An operation that requires a nonempty cloud received an empty one.
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    /// Matrix argument violates a structural precondition (e.g. asymmetry).
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),
    /// Operands have incompatible shapes.
    #[error("shape mismatch: {0}")]
    InvalidShape(String),
    /// Scores or inputs contain non-finite values.
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// Anchor selection on a region that has no other points.
    #[error("anchor selection needs at least two region points")]
    EmptyAnchors,
    /// Too few or rank-deficient correspondences for a rigid fit.
    #[error("degenerate correspondence set: {0}")]
    DegenerateSet(String),
    /// No hypothesis survived local-to-global estimation.
    #[error("registration failed: {0}")]
    RegistrationFailed(String),
    /// A metric is undefined for the given inputs.
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
    /// Requested scan-pair overlap cannot be realized on this scene.
    #[error("overlap target {target} infeasible: {reason}")]
    OverlapInfeasible { target: f64, reason: String },
    /// Malformed file contents.
    #[error("parse error at line {line}: {message}")]
    ParseError { line: usize, message: String },
    /// Configuration field out of range.
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
