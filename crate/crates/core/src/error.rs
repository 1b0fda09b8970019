use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] rerank_tensor::TensorError),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input data: {0}")]
    Data(String),

    #[error("record {id}: unparseable timestamp {value:?}")]
    Timestamp { id: String, value: String },

    #[error("question {0}: candidate pool is empty")]
    EmptyPool(String),

    #[error("negative sampling needs at least 2 distinct answers, found {0}")]
    TooFewAnswers(usize),

    #[error("empty corpus: {0}")]
    EmptyCorpus(&'static str),

    #[error("training diverged: {0}")]
    NonFinite(String),

    #[error("{path}: {message}")]
    Parse { path: String, message: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
