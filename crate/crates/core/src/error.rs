use thiserror::Error;

/// Errors raised across the toolkit.
///
/// Variants are grouped so that front ends can map them onto exit codes:
/// [`CodaError::category`] reports which group a value belongs to.
#[derive(Debug, Error)]
pub enum CodaError {
    #[error("part {index} is {value}: compositions require finite, strictly positive parts")]
    NonPositivePart { index: usize, value: f64 },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("total mismatch: {0} vs {1}")]
    TotalMismatch(f64, f64),
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("invalid sequential binary partition: {0}")]
    InvalidSbp(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("degenerate design: {0}")]
    DegenerateDesign(String),
    #[error("zero-scale outcome: {0}")]
    ZeroScale(String),
    #[error("initialization failed after {attempts} attempts: log density not finite")]
    Initialization { attempts: usize },
    #[error("sampling error: {0}")]
    Sampling(String),
    #[error("too few draws: need at least {needed}, have {have}")]
    TooFewDraws { needed: usize, have: usize },
    #[error("reallocation out of range: {0}")]
    Reallocation(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("toml error: {0}")]
    Toml(#[from] toml::de::Error),
}

/// Coarse classification of an error, used for exit-code mapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Usage,
    Data,
    Sampling,
}

impl CodaError {
    pub fn category(&self) -> ErrorCategory {
        match self {
            CodaError::Initialization { .. }
            | CodaError::Sampling(_)
            | CodaError::TooFewDraws { .. } => ErrorCategory::Sampling,
            CodaError::Config(_) => ErrorCategory::Usage,
            _ => ErrorCategory::Data,
        }
    }
}

pub type Result<T, E = CodaError> = std::result::Result<T, E>;
