use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("infeasible action: product {product} depot {depot} ships {shipped} but only {available} in stock")]
    Infeasible {
        product: usize,
        depot: usize,
        shipped: f64,
        available: f64,
    },
    #[error("episode finished: period {t} of horizon {horizon}")]
    EpisodeFinished { t: usize, horizon: usize },
    #[error("sequencing error: {0}")]
    Sequencing(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("size error: {0}")]
    Size(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: usize, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
