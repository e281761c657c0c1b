use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("class-set mismatch: expected `{expected}`, found `{found}`")]
    ClassSetMismatch { expected: String, found: String },

    #[error("pixel ({x}, {y}) has value {value}, which is not a class of `{class_set}`")]
    PixelOutOfRange {
        x: usize,
        y: usize,
        value: u32,
        class_set: String,
    },

    #[error("target class `{0}` has an all-zero affinity row")]
    ZeroRow(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    Diverged { iteration: usize, loss: f64 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.into(),
        }
    }

    /// Stable machine-readable tag, used by the CLI's JSON error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Invariant(_) => "invariant",
            Error::Dimension(_) => "dimension_mismatch",
            Error::ClassSetMismatch { .. } => "class_set_mismatch",
            Error::PixelOutOfRange { .. } => "pixel_out_of_range",
            Error::ZeroRow(_) => "zero_row",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Numerical(_) => "numerical",
            Error::Diverged { .. } => "diverged",
        }
    }
}
