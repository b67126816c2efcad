use std::path::PathBuf;

use chkp_core::LabError;
use thiserror::Error;

pub const EXIT_IO: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_SOLVER: u8 = 3;
pub const EXIT_VERDICT: u8 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("stage '{stage}' failed: {source}")]
    Solver {
        stage: String,
        #[source]
        source: LabError,
    },

    #[error("{} verdict(s) failed: {}", .0.len(), .0.join(", "))]
    Verdict(Vec<String>),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io { .. } => EXIT_IO,
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Solver { .. } => EXIT_SOLVER,
            CliError::Verdict(_) => EXIT_VERDICT,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> CliError {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

/// Attach a stage name to a core error. Parameter problems are reported as
/// configuration errors whichever stage finds them.
pub fn at_stage<T>(stage: &str, r: chkp_core::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| match e {
        LabError::Parameter(msg) => CliError::Config(msg),
        e @ LabError::GridTooCoarse { .. } => CliError::Config(e.to_string()),
        LabError::Io(source) => CliError::io(stage, source),
        source => CliError::Solver {
            stage: stage.into(),
            source,
        },
    })
}
