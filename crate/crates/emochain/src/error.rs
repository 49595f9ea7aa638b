use std::path::PathBuf;

use thiserror::Error;

use crate::registration::RegistrationResult;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("input too short: {len} frames, need at least {context}")]
    InputTooShort { len: usize, context: usize },

    #[error("non-finite numeric input: {0}")]
    NumericInput(String),

    #[error("integration diverged at step {step}")]
    Divergence { step: usize },

    #[error("unsupported kernel mode: {0}")]
    UnsupportedMode(String),

    #[error("factorization failed ({0}); try raising the kernel jitter")]
    Conditioning(String),

    #[error("line search stagnated after {} iterations", .0.iterations)]
    Stagnation(Box<RegistrationResult>),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("degenerate statistics: {0}")]
    Degenerate(String),

    #[error("pairing error, unmatched ids: {}", .0.join(", "))]
    Pairing(Vec<String>),

    #[error("count error: {0}")]
    Count(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
