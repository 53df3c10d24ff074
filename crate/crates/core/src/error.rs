use std::path::PathBuf;

use thiserror::Error;

/// Every failure the engine can report.
#[derive(Debug, Error)]
pub enum Error {
    /// A tensor operand had the wrong extent along one axis.
    #[error("{op}: dimension mismatch on {axis}: expected {expected}, got {actual}")]
    Dimension {
        op: &'static str,
        axis: String,
        expected: String,
        actual: String,
    },

    /// A precondition of an operation was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A configuration value (or combination) cannot be honored.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown device {0:?}")]
    UnknownDevice(String),

    /// Training produced a non-finite loss.
    #[error("non-finite loss {value} at step {step}")]
    NonFinite { step: usize, value: f32 },

    #[error("bad magic: expected \"GZT1\", found {found:?}")]
    BadMagic { found: [u8; 4] },

    #[error("truncated container: needed {needed} more bytes while reading {context}")]
    Truncated { context: String, needed: usize },

    /// Structurally invalid container contents other than the cases above.
    #[error("malformed container: {0}")]
    Format(String),

    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),

    #[error("duplicate tensor name {0:?}")]
    DuplicateName(String),

    #[error("tensor {name:?}: shape {actual:?} does not match expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("missing tensor {0:?}")]
    MissingTensor(String),

    /// Malformed text input (device tables, config files, metadata lines).
    #[error("{file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(
        op: &'static str,
        axis: impl Into<String>,
        expected: impl ToString,
        actual: impl ToString,
    ) -> Self {
        Error::Dimension {
            op,
            axis: axis.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable identifier, used by the CLI for machine-readable errors.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::Contract(_) => "contract",
            Error::Config(_) => "config",
            Error::UnknownDevice(_) => "unknown-device",
            Error::NonFinite { .. } => "non-finite",
            Error::BadMagic { .. } => "bad-magic",
            Error::Truncated { .. } => "truncated",
            Error::Format(_) => "format",
            Error::UnsupportedDtype(_) => "unsupported-dtype",
            Error::DuplicateName(_) => "duplicate-name",
            Error::ShapeMismatch { .. } => "shape-mismatch",
            Error::MissingTensor(_) => "missing-tensor",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
