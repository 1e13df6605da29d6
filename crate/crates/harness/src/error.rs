use thiserror::Error;

pub type HarnessResult<T> = Result<T, HarnessError>;

/// Command failure. `Config` exits with code 2, `Runtime` with code 3.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Config(String),

    #[error("{0}")]
    Runtime(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Runtime(_) => 3,
        }
    }

    /// Failure to load a user-supplied input; always a configuration error.
    pub fn input(e: iddqn::Error) -> Self {
        HarnessError::Config(e.to_string())
    }

    pub fn io(what: &str, e: impl std::fmt::Display) -> Self {
        HarnessError::Runtime(format!("{what}: {e}"))
    }
}

impl From<iddqn::Error> for HarnessError {
    fn from(e: iddqn::Error) -> Self {
        match e {
            iddqn::Error::Config(_) | iddqn::Error::InvalidAction(_) | iddqn::Error::Shape { .. } => {
                HarnessError::Config(e.to_string())
            }
            other => HarnessError::Runtime(other.to_string()),
        }
    }
}
