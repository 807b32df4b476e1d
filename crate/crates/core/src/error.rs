use thiserror::Error;

use crate::TokenId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate logits: every token is banned")]
    DegenerateLogits,

    #[error("invalid logit {value} at token {index}: NaN and +inf are not allowed")]
    InvalidLogit { index: usize, value: f64 },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("unmapped label `{0}`")]
    UnmappedLabel(String),

    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { id: TokenId, vocab_size: usize },

    #[error("invalid label set: {0}")]
    InvalidLabels(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("trace exhausted: no {branch} record for step {step}")]
    TraceExhausted { step: usize, branch: String },

    #[error("vocab mismatch: {0}")]
    VocabMismatch(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unknown token `{0}`")]
    UnknownToken(String),

    #[error("empty episode list")]
    NoEpisodes,

    #[error("backend failure at step {step}: {source}")]
    Backend {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn at_step(self, step: usize) -> Self {
        Error::Backend {
            step,
            source: Box::new(self),
        }
    }
}
