use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: missing file")]
    MissingFile { path: PathBuf },

    /// Malformed manifest, cache, checkpoint or grid file. `offset` is a line
    /// number for text files and a byte offset for binary ones.
    #[error("{path}:{offset}: {message}")]
    Format {
        path: PathBuf,
        offset: usize,
        message: String,
    },

    #[error("{path}: channel length mismatch: channel `{channel}` has {found} samples, expected {expected}")]
    ChannelLengthMismatch {
        path: PathBuf,
        channel: String,
        expected: usize,
        found: usize,
    },

    #[error("{path}:{offset}: unknown label code {code}")]
    UnknownLabelCode { path: PathBuf, offset: usize, code: u8 },

    #[error("invalid bundle: {0}")]
    InvalidBundle(String),

    #[error("unknown stage `{stage}` for scheme {scheme}")]
    UnknownStage { stage: String, scheme: String },

    #[error("unsupported resampling ratio {src_hz} Hz -> {dst_hz} Hz")]
    UnsupportedRate { src_hz: u32, dst_hz: u32 },

    #[error("in-bed range is absent")]
    MissingInBedRange,

    #[error("too few subjects: {0}")]
    TooFewSubjects(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing class {class} in dataset")]
    MissingClass { class: usize },

    #[error("training diverged at pass {pass}, step {step}: loss = {loss}")]
    Divergence { pass: usize, step: usize, loss: f64 },

    #[error("infeasible calibration targets: {0}")]
    Infeasible(String),

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("fold {fold}, stage {stage}: {source}")]
    Stage {
        fold: usize,
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile { path }
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, offset: usize, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            offset,
            message: message.into(),
        }
    }

    pub fn shape(message: impl Into<String>) -> Self {
        Error::Shape(message.into())
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn in_stage(self, fold: usize, stage: &'static str) -> Self {
        Error::Stage {
            fold,
            stage,
            source: Box::new(self),
        }
    }

    /// Short machine-readable category, printed by the command-line tool.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io { .. } | Error::MissingFile { .. } => "io",
            Error::Format { .. }
            | Error::ChannelLengthMismatch { .. }
            | Error::UnknownLabelCode { .. }
            | Error::InvalidBundle(_)
            | Error::UnknownStage { .. } => "format",
            Error::UnsupportedRate { .. }
            | Error::MissingInBedRange
            | Error::TooFewSubjects(_)
            | Error::Shape(_)
            | Error::InvalidArgument(_)
            | Error::MissingClass { .. }
            | Error::Infeasible(_) => "invalid-input",
            Error::NonFinite(_) | Error::Divergence { .. } => "numeric",
            Error::Config { .. } => "config",
            Error::Stage { source, .. } => source.category(),
        }
    }
}
