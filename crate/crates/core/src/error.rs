use std::path::PathBuf;

/// Every failure the pipeline can report.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("empty region: {0}")]
    EmptyRegion(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("scene generation failed: {0}")]
    Generation(String),

    #[error("backend failure: {0}")]
    Backend(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

/// Coarse error category, used for CLI exit codes and diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    InvalidParameter,
    Dimension,
    EmptyRegion,
    UndefinedMetric,
    Parse,
    Validation,
    MissingInput,
    Generation,
    Backend,
    Io,
}

impl ErrorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::InvalidParameter => "invalid_parameter",
            ErrorKind::Dimension => "dimension",
            ErrorKind::EmptyRegion => "empty_region",
            ErrorKind::UndefinedMetric => "undefined_metric",
            ErrorKind::Parse => "parse",
            ErrorKind::Validation => "validation",
            ErrorKind::MissingInput => "missing_input",
            ErrorKind::Generation => "generation",
            ErrorKind::Backend => "backend",
            ErrorKind::Io => "io",
        }
    }
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidParameter(_) => ErrorKind::InvalidParameter,
            Error::Dimension(_) => ErrorKind::Dimension,
            Error::EmptyRegion(_) => ErrorKind::EmptyRegion,
            Error::UndefinedMetric(_) => ErrorKind::UndefinedMetric,
            Error::Parse { .. } => ErrorKind::Parse,
            Error::Validation(_) => ErrorKind::Validation,
            Error::MissingInput(_) => ErrorKind::MissingInput,
            Error::Generation(_) => ErrorKind::Generation,
            Error::Backend(_) => ErrorKind::Backend,
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                ErrorKind::MissingInput
            }
            Error::Io { .. } => ErrorKind::Io,
            Error::Context { source, .. } => source.kind(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
