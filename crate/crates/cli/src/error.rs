use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Core(#[from] selfmi::Error),
}

impl CliError {
    /// 0 success, 1 config, 2 numerical, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        use selfmi::Error as E;
        match self {
            CliError::Config(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Io(_) => 3,
            CliError::Core(e) => match e {
                E::Validation(_) => 1,
                E::Io(_) | E::Parse { .. } | E::Schema(_) => 3,
                _ => 2,
            },
        }
    }
}
