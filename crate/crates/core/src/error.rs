use hseq_numcore::NumError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HseqError {
    #[error("source and target are not aligned: {source_lines} source lines vs {target_lines} target lines")]
    Alignment {
        source_lines: usize,
        target_lines: usize,
    },
    #[error("empty input: {0}")]
    Empty(String),
    #[error("invalid vocabulary: {0}")]
    Vocabulary(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: usize, size: usize },
    #[error("source length {len} exceeds the configured maximum {max}")]
    TooLong { len: usize, max: usize },
    #[error("training diverged at step {step}: loss is {loss}")]
    Divergence { step: u64, loss: f64 },
    #[error("{stage} stage failed: {message}")]
    Stage {
        stage: &'static str,
        message: String,
    },
    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),
    #[error("{path}: {message}")]
    File { path: String, message: String },
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = HseqError> = std::result::Result<T, E>;
