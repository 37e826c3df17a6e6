//! Crate-wide error type.

use alloc::string::String;

/// Errors raised by the core operations.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A case or manifest field violates a stated invariant.
    #[error("validation failed for case `{case_id}`, field `{field}`: {message}")]
    Validation {
        case_id: String,
        field: &'static str,
        message: String,
    },
    /// A manifest-level invariant (uniqueness, group consistency) is broken.
    #[error("manifest invalid: {0}")]
    Manifest(String),
    /// An argument is out of its documented domain.
    #[error("invalid argument: {0}")]
    Argument(String),
    /// Operation requested on the wrong payload mode (image vs features).
    #[error("unsupported payload mode: {0}")]
    UnsupportedMode(String),
    /// Tensor or batch shapes do not line up.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    /// ROC curve undefined because only one class is present.
    #[error("undefined ROC curve: {0}")]
    UndefinedCurve(String),
    /// A statistical test cannot be computed from the given samples.
    #[error("undefined test: {0}")]
    UndefinedTest(String),
    /// Zero variance where a test requires spread.
    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),
    /// Train/validation split resolved to an empty set.
    #[error("empty split: {0}")]
    EmptySplit(String),
}

pub type Result<T> = core::result::Result<T, Error>;
