use thiserror::Error;

use crate::collections::ConditionReport;
use crate::randomization::SignSearchReport;

#[derive(Debug, Error)]
pub enum Error {
    #[error("resolution exceeded: level {level} is above the supported maximum {max}")]
    ResolutionExceeded { level: u32, max: u32 },

    #[error("insufficient resolution: need at least {needed}, got {got}")]
    InsufficientResolution { needed: u32, got: u32 },

    #[error("resolution mismatch: {left} vs {right}")]
    ResolutionMismatch { left: u32, right: u32 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("intervals are not pairwise disjoint: {0} and {1} overlap")]
    NotDisjoint(String, String),

    #[error("empty collection: {0}")]
    EmptyCollection(String),

    #[error("incomplete family: no assignment for interval {0}")]
    IncompleteFamily(String),

    #[error("collection family violates its conditions ({} violations)", .0.violations.len())]
    InvalidFamily(Box<ConditionReport>),

    #[error("invalid exponent: {0}")]
    InvalidExponent(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("degenerate diagonal at {0}: zero entry has no sign")]
    DegenerateDiagonal(String),

    #[error("degenerate block diagonal at {0}: <T b_R, b_R> = 0")]
    DegenerateBlockDiagonal(String),

    #[error("operator generation failed: {0}")]
    Generation(String),

    #[error("enumeration cap exceeded: {axis}-support has {size} intervals (max {cap})")]
    EnumerationCap { axis: char, size: usize, cap: usize },

    #[error("sign search failed after {} attempts", .0.attempts)]
    SignsNotFound(Box<SignSearchReport>),

    #[error("factorization infeasible: {0}")]
    Infeasible(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
