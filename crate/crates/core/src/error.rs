use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("value vector is empty")]
    EmptyVector,
    #[error("negative value {value} at index {index}")]
    NegativeValue { index: usize, value: f64 },
    #[error("non-finite value at index {index}")]
    NonFiniteValue { index: usize },
    #[error("ell must be positive and finite, got {0}")]
    InvalidEll(f64),
    #[error("beta must lie in [0, 1], got {0}")]
    InvalidBeta(f64),
    #[error("exponent must be positive and finite, got {0}")]
    InvalidExponent(f64),
    #[error("tolerance must be positive and finite, got {0}")]
    InvalidTolerance(f64),
    #[error("bisection did not converge within {iterations} iterations")]
    BisectionNotConverged { iterations: usize },
    #[error("serve set is empty")]
    EmptyServeSet,
    #[error("advertiser {index} in the serve set has zero value")]
    ZeroValueInServeSet { index: usize },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("invalid allocation: {0}")]
    InvalidAllocation(String),

    #[error("allocation of advertiser {index} decreases in its own value near {at}")]
    NonMonotoneRule { index: usize, at: f64 },
    #[error("quadrature did not reach tolerance {tol} (error estimate {estimate})")]
    QuadratureNotConverged { tol: f64, estimate: f64 },
    #[error("grid must have at least {min} points, got {got}")]
    InvalidGrid { min: usize, got: usize },

    #[error("lambda must be at least 1, got {0}")]
    InvalidLambda(f64),
    #[error("alpha must lie strictly inside (0, 1), got {0}")]
    AlphaOutOfRange(f64),
    #[error("x must be greater than 1, got {0}")]
    InvalidX(f64),
    #[error("invalid number of advertisers: {0}")]
    InvalidK(usize),
    #[error("all values are zero")]
    AllZeroValues,

    #[error("invalid set collection: {0}")]
    InvalidCollection(String),
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("set #{set} crosses a partition boundary")]
    SetCrossesPartition { set: usize },
    #[error("k must be even, got {0}")]
    OddK(usize),
    #[error("k must be at least 4, got {0}")]
    KTooSmall(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("auctions share no advertisers")]
    EmptyIntersection,
    #[error("horizon contains no auctions")]
    EmptyHorizon,
    #[error("no comparable buckets for ell = {ell}")]
    NoComparableBuckets { ell: f64 },

    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}
