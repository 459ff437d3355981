use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{}:{line}: column `{column}`: {message}", file.display())]
    Csv {
        file: PathBuf,
        line: u64,
        column: String,
        message: String,
    },

    #[error("duplicate record: {0}")]
    Duplicate(String),

    #[error("missing covariate: {0}")]
    MissingCovariate(String),

    #[error("cannot fit model: {0}")]
    UnfitModel(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("serialization: {0}")]
    Serialization(#[from] serde_json::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
