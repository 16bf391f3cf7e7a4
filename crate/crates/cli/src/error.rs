use thiserror::Error;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] unlearn_core::Error),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 2 for configuration and input problems, 3 for I/O and integrity
    /// failures, 4 for numeric divergence.
    pub fn exit_code(&self) -> i32 {
        use unlearn_core::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Core(e) => match e {
                E::Shape(_) | E::Input(_) | E::Config(_) | E::Compatibility(_) => 2,
                E::Io(_) | E::Integrity(_) | E::Json(_) | E::Csv(_) => 3,
                E::Divergence { .. } => 4,
            },
        }
    }
}
