use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("config validation error: {0}")]
    Validation(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl LabError {
    /// Process exit status: 2 for configuration problems, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Parse(_) | LabError::Validation(_) => 2,
            LabError::Internal(_) => 3,
        }
    }
}

impl From<dispersive_core::Error> for LabError {
    fn from(e: dispersive_core::Error) -> Self {
        LabError::Internal(e.to_string())
    }
}

impl From<std::io::Error> for LabError {
    fn from(e: std::io::Error) -> Self {
        LabError::Internal(e.to_string())
    }
}
