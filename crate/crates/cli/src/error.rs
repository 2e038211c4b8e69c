use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] concealer::Error),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("{0}")]
    Check(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
}

impl CliError {
    /// 0 ok, 2 auth, 3 integrity, 4 usage, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        use concealer::Error as E;
        match self {
            CliError::Usage(_) | CliError::Parse { .. } => 4,
            CliError::Core(E::AuthFailure(_) | E::AuthorizationFailure { .. }) => 2,
            CliError::Core(E::IntegrityFailure(_) | E::AuthenticationFailure | E::CorruptPackage(_)) => 3,
            CliError::Core(E::InvalidQuery(_) | E::Config(_)) => 4,
            _ => 1,
        }
    }
}
