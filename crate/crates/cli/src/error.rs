use std::fmt;

use crw::CrwError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Solver,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Solver => 4,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub stage: Option<&'static str>,
    pub source: anyhow::Error,
}

impl CliError {
    pub fn config(err: impl Into<anyhow::Error>) -> Self {
        CliError { kind: ErrorKind::Config, stage: None, source: err.into() }
    }

    pub fn data(err: impl Into<anyhow::Error>) -> Self {
        CliError { kind: ErrorKind::Data, stage: None, source: err.into() }
    }

    /// Core errors: solver failures map to their own code, the rest are data errors.
    pub fn core(stage: &'static str, err: CrwError) -> Self {
        let kind = if err.is_solver_failure() { ErrorKind::Solver } else { ErrorKind::Data };
        CliError { kind, stage: Some(stage), source: err.into() }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            ErrorKind::Config => "config error",
            ErrorKind::Data => "data error",
            ErrorKind::Solver => "solver failure",
        };
        match self.stage {
            Some(stage) => write!(f, "{kind} in {stage}: {:#}", self.source),
            None => write!(f, "{kind}: {:#}", self.source),
        }
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Attach a stage name to a core result.
pub trait Stage<T> {
    fn stage(self, stage: &'static str) -> CliResult<T>;
}

impl<T> Stage<T> for crw::Result<T> {
    fn stage(self, stage: &'static str) -> CliResult<T> {
        self.map_err(|e| CliError::core(stage, e))
    }
}
