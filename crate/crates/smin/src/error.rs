use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum SminError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("empty dataset: {0}")]
    EmptyData(String),

    #[error("sampling failed for user {user}: {msg}")]
    Sampling { user: usize, msg: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("graph too large for enumeration: {nodes} nodes (limit {limit})")]
    TooLarge { nodes: usize, limit: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SminError>;
