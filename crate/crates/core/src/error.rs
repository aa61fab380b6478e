use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("negative weight {weight} on edge ({u}, {v})")]
    NegativeWeight { u: String, v: String, weight: f64 },
    #[error("node {0} has zero degree")]
    ZeroDegree(String),
    #[error("node id {id} out of range for {count} nodes")]
    NodeOutOfRange { id: usize, count: usize },
    #[error("row {row} of the transition matrix sums to {sum}, not 1")]
    NotStochastic { row: usize, sum: f64 },
    #[error("detailed balance fails for states ({i}, {j}): residual {residual}")]
    NotReversible { i: usize, j: usize, residual: f64 },
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("eigensolver failed: {0}")]
    Eigensolver(String),
    #[error("trait vector is constant; standardization undefined")]
    ConstantTrait,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid tree: {0}")]
    InvalidTree(String),
    #[error("sampler gave up after {attempts} attempts without reaching {target} participants")]
    RestartsExhausted { attempts: usize, target: usize },
    #[error("graph is not connected")]
    Disconnected,
    #[error("degrees unavailable: {0}")]
    DegreesUnavailable(String),
    #[error("GLS normalizer vanishes: lambda2 * (1 - 2/n) = 1")]
    DegenerateGls,
    #[error("covariance matrix is singular or not positive definite")]
    SingularCovariance,
    #[error("need at least 2 parent-child pairs, found {0}")]
    TooFewTransitions(usize),
    #[error("trait is not binary: found value {0}")]
    NonBinaryTrait(f64),
    #[error("regime violation: m * lambda2^2 = {product} is not above 1 ({regime})")]
    RegimeViolation { product: f64, regime: String },
    #[error("second eigenvalue is repeated (|lambda2 - lambda3| = {gap}); single-eigenvalue limit does not apply")]
    RepeatedSecondEigenvalue { gap: f64 },
    #[error("missing block label for state {0}")]
    MissingLabel(usize),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
