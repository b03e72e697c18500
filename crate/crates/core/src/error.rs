use thiserror::Error;

/// Errors raised anywhere in the simulator.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{rounds} rounds do not divide {n} samples per client")]
    NonDivisible { n: usize, rounds: usize },

    #[error("index {index} out of range 1..={len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("sample variant or dimension does not match the dataset")]
    VariantMismatch,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty model list")]
    EmptyList,

    #[error("non-finite iterate at client {client}, round {round}, step {step}")]
    NonFiniteIterate { client: usize, round: usize, step: usize },

    #[error("trajectory does not retain the iterates this operation needs")]
    RetentionInsufficient,

    #[error("distribution has no closed-form population risk")]
    NoClosedForm,

    #[error("distribution is incompatible with loss family {0}")]
    FamilyMismatch(&'static str),

    #[error("value outside the function domain: {0}")]
    DomainError(String),

    #[error("noisy updates (sigma_xi > 0) are not supported by the bound evaluator")]
    NoisyRunUnsupported,

    #[error("operation requires R = 1, got R = {0}")]
    WrongR(usize),

    #[error("enumeration of {configurations} configurations exceeds the guard of {guard}")]
    TooLarge { configurations: f64, guard: f64 },

    #[error("setup has the wrong shape: {0}")]
    WrongShape(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error for `{key}`: {reason}")]
    Validation { key: String, reason: String },

    #[error("at least {needed} rows are required, got {got}")]
    TooFewRows { needed: usize, got: usize },

    #[error("i/o error: {0}")]
    Io(String),

    #[error("csv error: {0}")]
    Csv(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}
