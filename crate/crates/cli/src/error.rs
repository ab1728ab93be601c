use thiserror::Error;

/// Command failures, grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Statistical(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Statistical(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<biasaudit::Error> for CliError {
    fn from(e: biasaudit::Error) -> Self {
        use biasaudit::Error as E;
        match e {
            E::Csv(ref c) if c.is_io_error() => CliError::Io(e.to_string()),
            E::SingleClass | E::SingularHessian => CliError::Statistical(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
