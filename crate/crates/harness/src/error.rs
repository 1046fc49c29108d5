use std::path::Path;

use thiserror::Error;

/// Failure classes of the harness; each maps to a process exit code.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl HarnessError {
    /// 1 for configuration problems, 2 for unreadable or malformed data,
    /// 3 when every method failed numerically.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 1,
            Self::Data(_) => 2,
            Self::Numerical(_) => 3,
        }
    }

    pub(crate) fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        Self::Data(format!("{}: {err}", path.display()))
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
