use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("unknown id `{0}`")]
    UnknownId(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("embedding table format error: {0}")]
    Format(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("K must be at least 1")]
    ZeroK,
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("no precomputed embedding for text (key {0})")]
    Lookup(String),
    #[error("candidate table was not approved by the validation gate")]
    Unapproved,
    #[error("degenerate update for tool `{0}`: refined vector has zero norm")]
    DegenerateUpdate(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch}, step {step}: {loss}")]
    NonFiniteLoss { epoch: usize, step: usize, loss: f64 },
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
