use dpacct_core::AccountingError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RgpError {
    #[error("shape mismatch in {context}: expected {expected:?}, found {found:?}")]
    ShapeMismatch { context: &'static str, expected: (usize, usize), found: (usize, usize) },
    #[error("rank {rank} exceeds min({rows}, {cols})")]
    RankTooLarge { rank: usize, rows: usize, cols: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dataset has {0} samples; at least 2 are required")]
    DatasetTooSmall(usize),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Accounting(#[from] AccountingError),
}

pub type Result<T> = std::result::Result<T, RgpError>;
