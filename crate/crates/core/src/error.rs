use thiserror::Error;

use crate::tensorcore::FormatError;

/// Errors surfaced by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("empty point set: {0}")]
    EmptySet(String),

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("stage {stage}, iteration {iter}: {source}")]
    Aborted {
        stage: usize,
        iter: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn empty(msg: impl Into<String>) -> Self {
        Error::EmptySet(msg.into())
    }

    /// True when the error comes from the numerics rather than from bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NonFinite(_) | Error::EmptySet(_) | Error::Degenerate(_) => true,
            Error::Aborted { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
