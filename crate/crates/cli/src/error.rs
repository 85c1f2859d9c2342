use blapn::Error as CoreError;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("{0}")]
    Io(#[from] std::io::Error),

    #[error("tolerance check failed: {0}")]
    Tolerance(String),

    #[error("{0}")]
    Data(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Machine-readable error, printed as JSON on stderr.
#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub error: &'static str,
    pub exit_code: i32,
    pub message: String,
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Core(e) => match e {
                CoreError::InvalidSpec(_)
                | CoreError::InvalidFilter(_)
                | CoreError::InvalidKernel(_)
                | CoreError::InvalidNoiseModel(_)
                | CoreError::Config(_) => "config",
                CoreError::UnstableFilter { .. } | CoreError::Diverged { .. } | CoreError::NoSteadyState { .. } => {
                    "instability"
                }
                _ => "error",
            },
            CliError::Tolerance(_) => "tolerance",
            CliError::Io(_) | CliError::Data(_) => "error",
        }
    }

    /// 2: configuration, 3: simulation instability, 4: tolerance failure,
    /// 1: anything else.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "config" => 2,
            "instability" => 3,
            "tolerance" => 4,
            _ => 1,
        }
    }

    pub fn report(&self) -> ErrorReport {
        ErrorReport {
            error: self.kind(),
            exit_code: self.exit_code(),
            message: self.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(CliError::Core(CoreError::InvalidSpec("x".into())).exit_code(), 2);
        assert_eq!(CliError::Core(CoreError::UnstableFilter { radius: 1.2 }).exit_code(), 3);
        assert_eq!(CliError::Core(CoreError::NoSteadyState { periods: 64 }).exit_code(), 3);
        assert_eq!(CliError::Tolerance("x".into()).exit_code(), 4);
        assert_eq!(CliError::Core(CoreError::GridMismatch).exit_code(), 1);
        let json = serde_json::to_string(&CliError::Config("bad".into()).report()).unwrap();
        assert_eq!(json, r#"{"error":"config","exit_code":2,"message":"bad"}"#);
    }
}
