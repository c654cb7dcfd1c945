//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error in {context}: {message}")]
    Domain { context: &'static str, message: String },

    #[error("moment undefined: E[1/x] diverges for tau = 0 and gamma <= 1 (gamma = {gamma})")]
    MomentUndefined { gamma: f64 },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid label {label} at subject {subject}, frame {frame} (K = {num_classes})")]
    InvalidLabel {
        subject: usize,
        frame: usize,
        label: i64,
        num_classes: usize,
    },

    #[error("class {class} has no labeled frames for subject {subject}")]
    EmptyClass { subject: usize, class: usize },

    #[error("non-finite value in {context} at index {index}")]
    NonFinite { context: String, index: String },

    #[error("parse error in {path} at row {row}, column {col}: {message}")]
    Parse {
        path: String,
        row: usize,
        col: usize,
        message: String,
    },

    #[error("data error in {path}: {message}")]
    Data { path: String, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn domain(context: &'static str, message: impl Into<String>) -> Self {
        Error::Domain {
            context,
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 config, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Parse { .. } | Error::Data { .. } | Error::Io { .. } => 3,
            Error::DimensionMismatch { .. }
            | Error::InvalidLabel { .. }
            | Error::EmptyClass { .. } => 3,
            Error::Domain { .. } | Error::MomentUndefined { .. } | Error::NonFinite { .. } => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
