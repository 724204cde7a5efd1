use thiserror::Error;

/// Errors raised across the preparation, anonymization and audit pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("requested {requested} rows but only {available} are available")]
    InsufficientRows { requested: usize, available: usize },

    #[error("training target has a single class")]
    DegenerateTarget,

    #[error("brute-force Shapley enumeration supports at most {max} features, got {got}")]
    TooManyFeatures { got: usize, max: usize },

    #[error("duplicate tracker id {0}")]
    DuplicateTrackerId(String),

    #[error("need at least {needed} rows to form one equivalence class, got {got}")]
    TooFewRows { got: usize, needed: usize },

    #[error("malformed tree: {0}")]
    MalformedTree(String),

    #[error("empty sample")]
    EmptySample,

    #[error("fingerprint feature `{0}` is missing from the cloud table")]
    FeatureMismatch(String),

    #[error("all paired differences are zero")]
    AllZeroDifferences,

    #[error("paired differences have zero spread")]
    ZeroSpread,

    #[error("empty input")]
    EmptyInput,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
