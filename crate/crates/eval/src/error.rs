use std::path::PathBuf;

use thiserror::Error;

use crate::strata::Stratum;

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("stratum `{stratum}` is unreachable: displacements stay below {max_displacement:.1} px under the sampling ranges")]
    StratumUnreachable { stratum: Stratum, max_displacement: f64 },

    #[error("stratum quotas sum to {quota_total} but {n_total} transforms were requested")]
    QuotaMismatch { n_total: usize, quota_total: usize },

    #[error("no sample satisfied the remaining quotas after {attempts} attempts")]
    SamplingExhausted { attempts: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("invalid binomial counts k={k}, n={n}")]
    InvalidCounts { k: u64, n: u64 },

    #[error("confidence level {0} outside (0, 1)")]
    InvalidLevel(f64),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("all paired differences are zero; the signed-rank test is undefined")]
    AllZeroDifferences,

    #[error("signed-rank test needs at least {needed} non-zero differences, found {found}")]
    TooFewPairs { found: usize, needed: usize },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Registration(#[from] comir_registration::RegistrationError),

    #[error(transparent)]
    Core(#[from] comir::ComirError),
}

impl EvalError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EvalError::Io {
            path: path.into(),
            source,
        }
    }
}
