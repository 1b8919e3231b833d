use thiserror::Error;

/// Errors produced anywhere in the model, corpus, and persistence layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("empty sequence: {0}")]
    EmptySequence(&'static str),
    #[error("empty pool: max-pooling needs at least one row")]
    EmptyPool,
    #[error("no valid action: every action is masked")]
    NoValidAction,
    #[error("tape error: {0}")]
    Tape(String),
    #[error("validation error in field `{field}`: {reason}")]
    Validation { field: &'static str, reason: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("vocabulary error: token id {token} is outside a vocabulary of {vocab}")]
    Vocabulary { token: usize, vocab: usize },
    #[error("end of text: word index {w} with {len} words")]
    EndOfText { w: usize, len: usize },
    #[error("invalid action {0}: masked at this location")]
    InvalidAction(String),
    #[error("mode error: {0}")]
    Mode(String),
    #[error("missing gold tags: {0}")]
    MissingGold(String),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("length mismatch: predicted {pred} tags, gold {gold}")]
    LengthMismatch { pred: usize, gold: usize },
    #[error("checkpoint: bad magic")]
    BadMagic,
    #[error("checkpoint: unsupported version {0}")]
    Version(u32),
    #[error("checkpoint: truncated ({0})")]
    Truncated(&'static str),
    #[error("checkpoint: header mismatch in `{field}`: {reason}")]
    HeaderMismatch { field: String, reason: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn validation(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Validation {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
