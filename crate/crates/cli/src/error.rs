use std::io;

use cpuq_core::{BaselineError, ConformalError, EvalError, ScoreError, SynthError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags or parameter values.
    #[error("usage: {0}")]
    Usage(String),
    /// Input files that cannot be read or do not validate.
    #[error("data: {0}")]
    Data(String),
    /// A check inside the pipeline failed; indicates a bug.
    #[error("internal: {0}")]
    Internal(String),
    #[error("io: {path}: {source}")]
    Io { path: String, source: io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) | CliError::Io { .. } => 3,
            CliError::Internal(_) => 4,
        }
    }

    pub fn io(path: impl Into<String>, source: io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<ScoreError> for CliError {
    fn from(e: ScoreError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::InvalidConfig { .. } => CliError::Usage(e.to_string()),
            SynthError::Scores(s) => CliError::Internal(s.to_string()),
        }
    }
}

impl From<ConformalError> for CliError {
    fn from(e: ConformalError) -> Self {
        match e {
            ConformalError::InvalidAlpha(_)
            | ConformalError::InvalidLambda(_)
            | ConformalError::InvalidKReg => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Conformal(c) => c.into(),
            EvalError::GridNotIncreasing(_)
            | EvalError::EmptyGrid
            | EvalError::TooFewResamples(_)
            | EvalError::NoBins
            | EvalError::InsufficientPool { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<BaselineError> for CliError {
    fn from(e: BaselineError) -> Self {
        CliError::Data(e.to_string())
    }
}
