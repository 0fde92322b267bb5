//! Error type shared by the engine modules.

use thiserror::Error;

/// Everything that can go wrong inside the engine.
///
/// IO and format errors are deliberately absent; they belong to the caller.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GpError {
    /// A token id falls outside the primitive set's id space.
    #[error("token id {0} is outside the primitive set")]
    InvalidToken(u16),
    /// A token sequence does not decode to a usable expression.
    #[error("invalid genome: {0}")]
    InvalidGenome(&'static str),
    /// A parameter value violates its documented range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    /// The primitive set cannot produce an expression in the requested
    /// length range (for example only binary operators and an even length).
    #[error("primitive set cannot build an expression in the requested length range")]
    InfeasiblePrimitiveSet,
    /// Selection was asked to draw from an empty pool.
    #[error("selection pool is empty")]
    EmptyPool,
    /// An operation needed a fitness value that has not been assigned yet.
    #[error("fitness has not been assigned")]
    FitnessUnset,
    /// Data fed to the engine does not match the primitive set.
    #[error("dataset mismatch: {0}")]
    DatasetMismatch(&'static str),
}
