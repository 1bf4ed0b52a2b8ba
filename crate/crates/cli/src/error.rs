use std::path::PathBuf;

use thiserror::Error;
use xmorph::Error as CoreError;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{}{message}", path.as_ref().map(|p| format!("{}: ", p.display())).unwrap_or_default())]
    Config { path: Option<PathBuf>, message: String },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn config(path: Option<PathBuf>, message: impl Into<String>) -> Self {
        CliError::Config {
            path,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        CliError::Usage(message.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            CliError::Core(CoreError::MissingFile(path))
        } else {
            CliError::Core(CoreError::Io { path, source })
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => core_code(e).0,
            CliError::Config { .. } => EXIT_CONFIG,
            CliError::Usage(_) => EXIT_USAGE,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => core_code(e).1,
            CliError::Config { .. } => "config",
            CliError::Usage(_) => "usage",
        }
    }
}

/// Exit code and short name for every library error.
pub fn core_code(e: &CoreError) -> (i32, &'static str) {
    use CoreError::*;
    match e {
        Io { .. } => (10, "io"),
        MissingFile(_) => (11, "missing-file"),
        SchemaViolation(_) => (12, "schema-violation"),
        DimensionMismatch { .. } => (13, "dimension-mismatch"),
        UnknownName { .. } => (14, "unknown-name"),
        SignalTooShort { .. } => (15, "signal-too-short"),
        TooFewBands { .. } => (16, "too-few-bands"),
        TooFewFrames { .. } => (17, "too-few-frames"),
        TooFewSamples { .. } => (18, "too-few-samples"),
        AudioFormat(_) => (19, "audio-format"),
        EmptyInput(_) => (20, "empty-input"),
        MixedContext(_) => (21, "mixed-context"),
        ContextMismatch(_) => (22, "context-mismatch"),
        UnknownLabel(_) => (23, "unknown-label"),
        EmptyCorrespondence => (24, "empty-correspondence"),
        NonFiniteLoss { .. } => (25, "non-finite-loss"),
        NonPositiveBandwidth(_) => (26, "non-positive-bandwidth"),
        EmptyDomain(_) => (27, "empty-domain"),
        DegenerateLabels(_) => (28, "degenerate-labels"),
        NotSymmetric(_) => (29, "not-symmetric"),
        CholeskyFailure => (30, "cholesky-failure"),
        NoDirections => (31, "no-directions"),
        UnknownDomain(_) => (32, "unknown-domain"),
        SingleClass => (33, "single-class"),
        NonFiniteFeature { .. } => (34, "non-finite-feature"),
        InconsistentClassSets => (35, "inconsistent-class-sets"),
        AllZeroWeights => (36, "all-zero-weights"),
        TooFewBudgets { .. } => (37, "too-few-budgets"),
        BudgetExceedsPool { .. } => (38, "budget-exceeds-pool"),
        InsufficientUniqueObjects { .. } => (39, "insufficient-unique-objects"),
        Leakage(_) => (40, "leakage"),
        InvalidConfig(_) => (41, "invalid-config"),
        ModelFormat(_) => (42, "model-format"),
        Json(_) => (43, "json"),
        Csv(_) => (44, "csv"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn codes_are_distinct() {
        let samples = vec![
            CoreError::Io {
                path: "p".into(),
                source: std::io::Error::other("x"),
            },
            CoreError::MissingFile("p".into()),
            CoreError::SchemaViolation(String::new()),
            CoreError::DimensionMismatch {
                what: String::new(),
                expected: 1,
                found: 2,
            },
            CoreError::UnknownName {
                kind: "k",
                name: String::new(),
            },
            CoreError::SignalTooShort { samples: 1, window: 2 },
            CoreError::TooFewBands { bands: 1, bins: 2 },
            CoreError::TooFewFrames { frames: 1, bins: 2 },
            CoreError::TooFewSamples { samples: 1, bins: 2 },
            CoreError::AudioFormat(String::new()),
            CoreError::EmptyInput(""),
            CoreError::MixedContext(String::new()),
            CoreError::ContextMismatch(String::new()),
            CoreError::UnknownLabel(String::new()),
            CoreError::EmptyCorrespondence,
            CoreError::NonFiniteLoss { epoch: 0 },
            CoreError::NonPositiveBandwidth(0.0),
            CoreError::EmptyDomain(1),
            CoreError::DegenerateLabels(String::new()),
            CoreError::NotSymmetric(1.0),
            CoreError::CholeskyFailure,
            CoreError::NoDirections,
            CoreError::UnknownDomain(3),
            CoreError::SingleClass,
            CoreError::NonFiniteFeature { row: 0 },
            CoreError::InconsistentClassSets,
            CoreError::AllZeroWeights,
            CoreError::TooFewBudgets { have: 0, need: 1 },
            CoreError::BudgetExceedsPool { budget: 2, pool: 1 },
            CoreError::InsufficientUniqueObjects { found: 0, needed: 1 },
            CoreError::Leakage(String::new()),
            CoreError::InvalidConfig(String::new()),
            CoreError::ModelFormat(String::new()),
            CoreError::Json(serde_json::from_str::<u8>("x").unwrap_err()),
            CoreError::Csv(csv_error()),
        ];
        let codes: BTreeSet<i32> = samples.iter().map(|e| core_code(e).0).collect();
        let names: BTreeSet<&str> = samples.iter().map(|e| core_code(e).1).collect();
        assert_eq!(codes.len(), samples.len());
        assert_eq!(names.len(), samples.len());
        assert!(codes.iter().all(|&c| c > EXIT_CONFIG && c < 126));
    }

    fn csv_error() -> csv::Error {
        let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader("a\nb,c\n".as_bytes());
        r.records().find_map(|x| x.err()).unwrap()
    }
}
