use thiserror::Error;

use crate::lattice::Plane;

/// Errors raised by the simulation and analysis modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("expected a field on the {expected} plane, got {found}")]
    WrongPlane {
        expected: &'static str,
        found: Plane,
    },

    #[error("sample {0} is not finite")]
    NonFinite(usize),

    #[error("mask is not binary (pixel {index} has transmission {value})")]
    NonBinaryMask { index: usize, value: String },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("mask file: {0}")]
    MaskFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
