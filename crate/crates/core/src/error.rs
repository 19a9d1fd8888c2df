use std::path::PathBuf;

/// Errors surfaced by training, configuration and I/O.
///
/// Contract violations (stepping a finished episode, out-of-range symbols,
/// shape mismatches inside the tape) panic instead of returning an error.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite loss ({value}) in {context}")]
    NonFiniteLoss { context: String, value: f64 },

    #[error("parameter `{name}` became non-finite after an optimizer step")]
    NonFiniteParameter { name: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("unknown environment `{0}`")]
    UnknownEnv(String),

    #[error("trajectory has no marked test-action timestep")]
    MissingTestStep,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Path {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn at_path(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Path {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
