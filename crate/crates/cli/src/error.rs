use dpacct_core::AccountingError;
use dpacct_rgp::RgpError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid {field}: {message}")]
    Config { field: String, message: String },
    #[error("{context}: {source}")]
    Unreachable { context: String, source: AccountingError },
    #[error("{0}")]
    Failed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn config(field: &str, message: impl Into<String>) -> Self {
        CliError::Config { field: field.into(), message: message.into() }
    }

    /// Wraps an accounting error, keeping `TargetUnreachable` distinct.
    pub fn accounting(context: impl Into<String>, err: AccountingError) -> Self {
        match err {
            e @ AccountingError::TargetUnreachable { .. } => CliError::Unreachable { context: context.into(), source: e },
            e => CliError::Failed(format!("{}: {e}", context.into())),
        }
    }

    pub fn training(err: RgpError) -> Self {
        match err {
            RgpError::Accounting(e) => CliError::accounting("calibration", e),
            RgpError::InvalidConfig(m) => CliError::config("train-sim", m),
            RgpError::DatasetTooSmall(n) => CliError::config("data", format!("dataset has {n} samples; need at least 2")),
            RgpError::Parse { line, message } => CliError::config("data", format!("line {line}: {message}")),
            e => CliError::Failed(e.to_string()),
        }
    }

    /// 2: bad configuration, 3: ε target unreachable, 1: anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Unreachable { .. } => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
