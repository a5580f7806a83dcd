use thiserror::Error;

/// Errors raised across the design, calibration and simulation stack.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("undeclared variable `{name}` at line {line}, column {column}")]
    UndeclaredVariable {
        name: String,
        line: usize,
        column: usize,
    },
    #[error("function `{name}` takes {expected} argument(s), got {got} (line {line}, column {column})")]
    Arity {
        name: String,
        expected: usize,
        got: usize,
        line: usize,
        column: usize,
    },
    #[error("invalid model signature: {0}")]
    Signature(String),
    #[error("{what} coordinate {index} = {value} outside bounds [{lo}, {hi}]")]
    OutOfBounds {
        what: &'static str,
        index: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("non-finite result in subexpression `{0}`")]
    NonFinite(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("singular information: the sensitivity matrix is degenerate over the design region")]
    SingularInformation,
    #[error("infeasible levels: every level of dimension {dim} collides with an existing point")]
    InfeasibleLevels { dim: usize },
    #[error("budget infeasible: n = {n} but at least {required} runs are needed")]
    BudgetInfeasible { n: usize, required: usize },
    #[error("covariance factorization failed after jitter escalation (last jitter {jitter:e})")]
    Factorization { jitter: f64 },
    #[error("MCMC failure: {0}")]
    Mcmc(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("data error: {0}")]
    Data(String),
}

pub type Result<T> = std::result::Result<T, Error>;
