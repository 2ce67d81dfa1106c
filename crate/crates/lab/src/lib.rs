//! File formats, configuration, parallel ensembles and the command line
//! around `stochsn-core`.

pub mod commands;
pub mod config;
pub mod io;
pub mod manifest;
pub mod parallel;

use stochsn_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerics(CoreError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<CoreError> for LabError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidParam { .. } | CoreError::GridTooCoarse { .. } => LabError::Config(e.to_string()),
            other => LabError::Numerics(other),
        }
    }
}

impl LabError {
    /// 2 for configuration problems, 3 for numerical failures, 1 for IO.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) => 2,
            LabError::Numerics(_) => 3,
            LabError::Io(_) => 1,
        }
    }
}
