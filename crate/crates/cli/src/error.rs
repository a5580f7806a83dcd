use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error in `{field}`: expected {expected}, got {got}")]
    Config {
        field: String,
        expected: String,
        got: String,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{0}")]
    Core(#[from] calidesign::Error),
    #[error("study failed: only {valid:.0}% of cells are valid")]
    Study { valid: f64 },
}

impl CliError {
    pub fn config(field: impl Into<String>, expected: impl Into<String>, got: impl ToString) -> Self {
        CliError::Config {
            field: field.into(),
            expected: expected.into(),
            got: got.to_string(),
        }
    }

    /// 1 for invalid input, 2 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        use calidesign::Error as E;
        match self {
            CliError::Config { .. } | CliError::Parse(_) | CliError::Io { .. } => 1,
            CliError::Core(e) => match e {
                E::SingularInformation | E::Factorization { .. } | E::Mcmc(_) | E::NonFinite(_) => 2,
                _ => 1,
            },
            CliError::Study { .. } => 2,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
