use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot parse config: {0}")]
    Parse(String),

    #[error("invalid config field `{field}`: {reason}")]
    Validation { field: String, reason: String },

    #[error("numerical blow-up: {0}")]
    BlowUp(String),

    #[error(transparent)]
    Core(#[from] sgbh_core::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 2 for config problems, 3 for blow-up, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) | CliError::Validation { .. } => 2,
            CliError::BlowUp(_) | CliError::Core(sgbh_core::Error::NonFinite { .. }) => 3,
            _ => 1,
        }
    }
}
