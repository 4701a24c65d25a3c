use motionfit::anim::AnimError;
use motionfit::eval::EvalError;
use motionfit::features::FtrvError;
use motionfit::fitting::FitError;
use thiserror::Error;

/// A failed command, classified by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments or inputs, detected before any heavy compute. Exit 2.
    #[error("{0}")]
    Usage(String),
    /// Non-finite loss or gradient during optimization. Exit 1.
    #[error("{0}")]
    Numerical(String),
    /// I/O or other failure after validation. Exit 1.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numerical(_) | CliError::Runtime(_) => 1,
        }
    }
}

impl From<FitError> for CliError {
    fn from(e: FitError) -> Self {
        match e {
            FitError::NonFinite { .. } => CliError::Numerical(e.to_string()),
            FitError::Io { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Raster(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<AnimError> for CliError {
    fn from(e: AnimError) -> Self {
        match e {
            AnimError::Io { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<FtrvError> for CliError {
    fn from(e: FtrvError) -> Self {
        CliError::Usage(e.to_string())
    }
}
