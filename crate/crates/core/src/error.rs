use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse error class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid vocabulary: {0}")]
    Vocabulary(String),

    #[error("row {row}: unknown label {label:?} for concept {concept:?}")]
    UnknownLabel { row: usize, concept: String, label: String },

    #[error("row {row}: malformed date {value:?} (expected YYYYMMDD)")]
    MalformedDate { row: usize, value: String },

    #[error("row {row}: malformed outcome {value:?} (expected 0 or 1)")]
    MalformedOutcome { row: usize, value: String },

    #[error("missing required column {0:?}")]
    MissingColumn(String),

    #[error("column {0:?} is not a concept of the vocabulary")]
    UnknownColumn(String),

    #[error("row {row}: concept {concept:?} has no value and no default label")]
    MissingValue { row: usize, concept: String },

    #[error("duplicate encounter_id {0:?}")]
    DuplicateEncounter(String),

    #[error("malformed csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("invalid split: {0}")]
    Split(String),

    #[error("invalid synthetic config: {0}")]
    SynthConfig(String),

    #[error("embedding table line {line}: {message}")]
    EmbeddingFormat { line: usize, message: String },

    #[error("embedding table has no vector for ({concept:?}, {label:?})")]
    MissingEmbedding { concept: String, label: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("embedding family mismatch: checkpoint was trained with {checkpoint:?}, table is {table:?}")]
    FamilyMismatch { checkpoint: String, table: String },

    #[error("invalid model configuration: {0}")]
    ModelConfig(String),

    #[error("instance has no rows")]
    EmptyInstance,

    #[error("forward cache is stale: model parameters changed since the forward pass")]
    StaleCache,

    #[error("gradient shape mismatch for {0}")]
    GradientShape(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),

    #[error("AUROC is undefined: need at least one positive and one negative (got {positives} positive, {negatives} negative)")]
    SingleClass { positives: usize, negatives: usize },

    #[error("length mismatch: {scores} scores vs {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },

    #[error("invalid training configuration: {0}")]
    TrainConfig(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("unsupported checkpoint format_version {found} (this build reads {supported})")]
    CheckpointVersion { found: u32, supported: u32 },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::NonFinite(_) => ErrorClass::Numeric,
            Error::TrainConfig(_) | Error::Config(_) => ErrorClass::Usage,
            _ => ErrorClass::Data,
        }
    }
}
