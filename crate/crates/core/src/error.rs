use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing value at row {row}, column '{column}'")]
    MissingValue { row: usize, column: String },
    #[error("invalid number '{value}' at row {row}, column '{column}'")]
    InvalidNumber {
        row: usize,
        column: String,
        value: String,
    },
    #[error("duplicate unit id '{0}'")]
    DuplicateId(String),
    #[error("unknown column '{0}': not present in the data file")]
    UnknownColumn(String),
    #[error("required column '{0}' is missing from the data file")]
    MissingColumn(String),
    #[error("column '{0}' is assigned more than one role")]
    ConflictingRole(String),
    #[error("covariate '{0}' is constant (pooled SD is zero)")]
    ConstantCovariate(String),
    #[error("exposure at row {row} is '{value}', expected 0 or 1")]
    NonBinaryExposure { row: usize, value: String },
    #[error("config syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown config key '{0}'")]
    UnknownKey(String),
    #[error("invalid tolerance for '{name}': {value}")]
    InvalidTolerance { name: String, value: f64 },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("target profile has no mean for balance covariate '{0}'")]
    MissingTargetMean(String),
    #[error("no stratum contains both exposed and unexposed units")]
    EmptyProblem,
    #[error("selection problem is infeasible")]
    Infeasible,
    #[error("linear program is numerically singular")]
    SingularBasis,
    #[error("enumeration oracle limited to 26 variables, problem has {0}")]
    TooLarge(usize),
    #[error("stratum '{0}' has unequal selected exposed and unexposed counts")]
    UnbalancedStratum(String),
    #[error("unknown unit id '{0}'")]
    UnknownId(String),
    #[error("{0}")]
    InsufficientData(String),
    #[error("selection failed verification: {0}")]
    VerificationFailed(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
