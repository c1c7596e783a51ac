use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("cyclic prefix of {cp_len} samples does not exceed the largest delay tap {max_delay}")]
    CyclicPrefixTooShort { cp_len: usize, max_delay: usize },

    #[error("diagonal entry {index} is not strictly positive ({value})")]
    NonPositiveDiagonal { index: usize, value: f64 },

    #[error("matrix is not Hermitian positive definite (column {column})")]
    Indefinite { column: usize },

    #[error("GMRES did not reach the tolerance: relative residual {relative_residual:e} after {cycles} cycles")]
    NotConverged {
        relative_residual: f64,
        cycles: usize,
    },

    #[error("dense reference of dimension {n} exceeds the size guard {limit}")]
    TooLarge { n: usize, limit: usize },

    #[error("matrix is not structurally symmetric at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
