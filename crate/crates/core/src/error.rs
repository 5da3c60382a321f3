use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type. Variants carry enough context to point at the
/// offending file, row, or stage without re-reading inputs.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest {path}, row {row}: {message}")]
    Manifest {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("roi csv {path}: {message}")]
    RoiCsv { path: PathBuf, message: String },

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("filter design: {0}")]
    FilterDesign(String),

    #[error("signal of length {len} is too short (minimum {min})")]
    SignalTooShort { len: usize, min: usize },

    #[error("filter dither rejected after {retries} retries (perturbed band leaves (0, fs/2))")]
    DitherRejected { retries: usize },

    #[error("class {class} has {got} subjects, need at least {need}")]
    TooFewSubjects {
        class: &'static str,
        need: usize,
        got: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("subject {subject_id}{}: {source}", region.map(|r| format!(", region {r}")).unwrap_or_default())]
    Subject {
        subject_id: String,
        region: Option<usize>,
        #[source]
        source: Box<Error>,
    },

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn with_subject(self, subject_id: &str, region: Option<usize>) -> Self {
        Error::Subject {
            subject_id: subject_id.to_string(),
            region,
            source: Box::new(self),
        }
    }

    /// Process exit code for the CLI: 1 usage, 2 data, 3 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::InvalidConfig(_) => 1,
            Error::Io { .. }
            | Error::Manifest { .. }
            | Error::RoiCsv { .. }
            | Error::TooFewSubjects { .. }
            | Error::InvalidInput(_) => 2,
            Error::Subject { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
