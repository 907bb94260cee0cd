use std::path::PathBuf;

/// Errors produced by the planning, estimation and simulation layers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{what} = {value} is outside its open domain {domain}")]
    Domain {
        what: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("trajectory segment is not consistent with the vehicle dynamics ({0})")]
    InconsistentSegment(String),

    #[error("no trajectory segments buffered")]
    NoData,

    #[error("solver could not start: {0}")]
    SolverInit(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
