use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("parse error in {source_name} at byte {offset}: {message}")]
    ParseAtOffset {
        source_name: String,
        offset: u64,
        message: String,
    },

    #[error("parse error in {source_name} at line {line}: {message}")]
    ParseAtLine {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("empty point cloud: {0}")]
    EmptyCloud(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category, used for CLI diagnostics.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::ParseAtOffset { .. } | Error::ParseAtLine { .. } => "parse",
            Error::EmptyCloud(_) => "empty-cloud",
            Error::Config(_) => "config",
            Error::Data(_) => "data",
            Error::Contract(_) => "contract",
            Error::NonFinite(_) => "non-finite",
            Error::Io { .. } => "io",
        }
    }
}
