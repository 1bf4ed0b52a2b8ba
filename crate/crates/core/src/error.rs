use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("unknown {kind} `{name}`")]
    UnknownName { kind: &'static str, name: String },

    #[error("signal has {samples} samples, fewer than the FFT window of {window}")]
    SignalTooShort { samples: usize, window: usize },
    #[error("{bands} bands cannot fill {bins} frequency bins")]
    TooFewBands { bands: usize, bins: usize },
    #[error("{frames} frames cannot fill {bins} time bins")]
    TooFewFrames { frames: usize, bins: usize },
    #[error("{samples} samples cannot fill {bins} temporal bins")]
    TooFewSamples { samples: usize, bins: usize },
    #[error("unsupported audio format: {0}")]
    AudioFormat(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("trials mix objects or contexts: {0}")]
    MixedContext(String),
    #[error("source and target contexts differ: {0}")]
    ContextMismatch(String),
    #[error("unknown label kind `{0}`")]
    UnknownLabel(String),

    #[error("correspondence set is empty")]
    EmptyCorrespondence,
    #[error("training loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("kernel bandwidth must be positive, got {0}")]
    NonPositiveBandwidth(f64),
    #[error("domain {0} has no samples")]
    EmptyDomain(usize),
    #[error("labels are degenerate: {0}")]
    DegenerateLabels(String),
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("Cholesky factorization failed; B + eps*I is not positive definite")]
    CholeskyFailure,
    #[error("no valid alignment directions were found")]
    NoDirections,
    #[error("unknown domain {0}; expected 1 or 2")]
    UnknownDomain(usize),

    #[error("training data holds a single class")]
    SingleClass,
    #[error("feature matrix contains a non-finite value at row {row}")]
    NonFiniteFeature { row: usize },

    #[error("score matrices disagree on class sets or sample counts")]
    InconsistentClassSets,
    #[error("all context weights are zero")]
    AllZeroWeights,
    #[error("{have} budgets available, {need} required")]
    TooFewBudgets { have: usize, need: usize },
    #[error("budget {budget} exceeds the training pool of {pool}")]
    BudgetExceedsPool { budget: usize, pool: usize },
    #[error("only {found} objects with unique weight+content, {needed} needed")]
    InsufficientUniqueObjects { found: usize, needed: usize },
    #[error("train/test leakage detected: {0}")]
    Leakage(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("model file format: {0}")]
    ModelFormat(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn dims(what: impl Into<String>, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            what: what.into(),
            expected,
            found,
        }
    }
}
