use std::path::PathBuf;

/// Errors raised by the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}:{line}: malformed record: {message}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate mention id `{0}`")]
    DuplicateMention(String),

    #[error("duplicate entity id `{0}`")]
    DuplicateEntity(String),

    #[error("duplicate document id `{0}`")]
    DuplicateDocument(String),

    #[error("entity `{0}` has an empty name")]
    EmptyName(String),

    #[error("mention `{mention_id}`: {message}")]
    SpanMismatch { mention_id: String, message: String },

    #[error("unknown segment label `{0}`")]
    UnknownSegment(String),

    #[error("mention `{mention_id}` refers to unknown document `{doc_id}`")]
    UnknownDocument { mention_id: String, doc_id: String },

    #[error("document `{doc_id}` dated {date} lies outside the timeline window {start}..={end}")]
    OutOfWindow {
        doc_id: String,
        date: chrono::NaiveDate,
        start: chrono::NaiveDate,
        end: chrono::NaiveDate,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in vector `{0}`")]
    NonFinite(String),

    #[error("alpha must lie in [0, 1], got {0}")]
    AlphaOutOfRange(f64),

    #[error("token budget {budget} cannot hold the {needed} tokens required")]
    BudgetTooSmall { budget: usize, needed: usize },

    #[error("no {kind} embedding for `{id}`")]
    MissingEmbedding { kind: &'static str, id: String },

    #[error("mention `{0}` has no gold entity")]
    MissingGoldLink(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("entity catalog is empty")]
    EmptyCatalog,

    #[error("vector index is empty")]
    EmptyIndex,

    #[error("no records in group `{0}`")]
    EmptyGroup(String),

    #[error("{variant} prompt requires field `{field}`")]
    MissingField { variant: &'static str, field: &'static str },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("client failure during {stage}: {message}")]
    Client { stage: String, message: String },

    #[error("embedding store for segment `{0}` is frozen")]
    Frozen(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
