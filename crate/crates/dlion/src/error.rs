//! One error type for the whole library.
//!
//! Variants map to distinct failure classes so callers (and the CLI's exit
//! codes) can tell misuse apart from violated runtime contracts and from
//! numerical blow-ups.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed data handed to an operation (wrong length, non-finite entry,
    /// empty worker list, broken parity, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A parameter outside its documented domain (lambda <= 0, keep fraction
    /// outside (0,1], unknown method name, ...).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A caller-side precondition that other components are supposed to
    /// guarantee was broken (e.g. an aggregated update with |entry| > 1).
    #[error("contract violation: {0}")]
    ContractViolation(String),

    /// Undecodable wire bytes: reserved bit pattern, bad length, nonzero
    /// padding, bad checkpoint magic or version.
    #[error("corrupt stream: {0}")]
    CorruptStream(String),

    /// Workers disagreed on state that must be bit-identical.
    #[error("internal consistency: {0}")]
    Inconsistency(String),

    /// Training produced a non-finite value; `round` is 1-based.
    #[error("divergence at round {round}: {what}")]
    Divergence { round: usize, what: String },

    /// A cell in a CSV dataset failed to parse. Rows are 1-based data rows
    /// (the header is not counted), columns are 1-based.
    #[error("csv parse error at row {row}, column {col}: {msg}")]
    CsvCell { row: usize, col: usize, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid_input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn invalid_parameter(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
