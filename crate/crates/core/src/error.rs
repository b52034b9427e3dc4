use thiserror::Error;

use crate::generators::GenKind;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("{what} is not positive definite")]
    NotPositiveDefinite { what: &'static str },

    #[error("{what} is singular")]
    Singular { what: &'static str },

    #[error("design matrix has numerical rank {rank}, expected full column rank {expected}")]
    RankDeficient { rank: usize, expected: usize },

    #[error("invalid null-space basis: {0}")]
    InvalidNullBasis(String),

    #[error("invalid tolerance configuration: {0}")]
    InvalidTolerance(String),

    #[error("missing {0}")]
    Missing(&'static str),

    #[error("precondition of {check} not met: {reason}")]
    Precondition { check: &'static str, reason: String },

    /// Two algebraically equivalent routes produced different verdicts. This
    /// signals numerical trouble near a tolerance boundary, not a math result.
    #[error("equivalent routes disagree in {check}: {detail}")]
    RouteDisagreement { check: &'static str, detail: String },

    #[error("could not generate a {kind} instance from seed {seed} after {attempts} attempts")]
    Generation {
        kind: GenKind,
        seed: u64,
        attempts: usize,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape(rows: usize, cols: usize) -> String {
    format!("{rows}x{cols}")
}
