//! Crate-wide error type.

use alloc::string::String;
use core::fmt;

/// Errors surfaced by dataset construction, model evaluation, and the
/// theory oracles.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Tensor or batch shapes violate an operation's contract.
    ShapeMismatch { context: &'static str, detail: String },
    /// An argument violates a documented precondition.
    Contract { context: &'static str, detail: String },
    /// A class does not hold enough samples for the requested resampling.
    InsufficientData { class: usize, have: usize, need: usize },
    /// A byte stream does not follow the expected file layout.
    Format { offset: usize, detail: String },
    /// A parameter lies outside the mathematical domain of a formula.
    Domain { context: &'static str, detail: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { context, detail } => {
                write!(f, "shape mismatch in {context}: {detail}")
            }
            Error::Contract { context, detail } => {
                write!(f, "contract violation in {context}: {detail}")
            }
            Error::InsufficientData { class, have, need } => {
                write!(
                    f,
                    "class {class} holds {have} samples but {need} are required"
                )
            }
            Error::Format { offset, detail } => {
                write!(f, "format error at byte {offset}: {detail}")
            }
            Error::Domain { context, detail } => {
                write!(f, "domain error in {context}: {detail}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub fn shape(context: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            context,
            detail: detail.into(),
        }
    }

    pub fn contract(context: &'static str, detail: impl Into<String>) -> Self {
        Error::Contract {
            context,
            detail: detail.into(),
        }
    }

    pub fn domain(context: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            context,
            detail: detail.into(),
        }
    }

    pub fn format(offset: usize, detail: impl Into<String>) -> Self {
        Error::Format {
            offset,
            detail: detail.into(),
        }
    }
}
