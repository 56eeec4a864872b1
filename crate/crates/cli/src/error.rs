use std::fmt;
use std::path::Path;

use emucascade::Error as CoreError;

/// Process exit status of a failed command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Usage,
    Validation,
    Runtime,
}

impl ExitKind {
    pub fn code(self) -> i32 {
        match self {
            ExitKind::Usage => 2,
            ExitKind::Validation => 3,
            ExitKind::Runtime => 4,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        Self {
            kind: ExitKind::Usage,
            message: msg.into(),
        }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Self {
            kind: ExitKind::Validation,
            message: msg.into(),
        }
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        Self {
            kind: ExitKind::Runtime,
            message: msg.into(),
        }
    }

    /// Prefixes the message with the stage that failed.
    pub fn in_stage(mut self, stage: &str) -> Self {
        self.message = format!("stage `{stage}`: {}", self.message);
        self
    }

    pub fn code(&self) -> i32 {
        self.kind.code()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

fn kind_of(e: &CoreError) -> ExitKind {
    match e {
        CoreError::Csv(c) if c.is_io_error() => ExitKind::Runtime,
        CoreError::Json(j) if j.is_io() => ExitKind::Runtime,
        CoreError::Parse { .. }
        | CoreError::Invariant { .. }
        | CoreError::OffPlane { .. }
        | CoreError::Config(_)
        | CoreError::ModelFormat(_)
        | CoreError::LabelMismatch(_)
        | CoreError::MissingProbability { .. }
        | CoreError::Unlabeled(_)
        | CoreError::Csv(_)
        | CoreError::Json(_) => ExitKind::Validation,
        _ => ExitKind::Runtime,
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        Self {
            kind: kind_of(&e),
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::runtime(e.to_string())
    }
}

/// Attaches stage and file context to fallible results.
pub trait Context<T> {
    fn stage(self, stage: &str) -> CliResult<T>;
    fn at(self, path: &Path) -> CliResult<T>;
}

impl<T, E: Into<CliError>> Context<T> for Result<T, E> {
    fn stage(self, stage: &str) -> CliResult<T> {
        self.map_err(|e| e.into().in_stage(stage))
    }

    fn at(self, path: &Path) -> CliResult<T> {
        self.map_err(|e| {
            let mut e = e.into();
            if !e.message.contains(&*path.to_string_lossy()) {
                e.message = format!("{}: {}", path.display(), e.message);
            }
            e
        })
    }
}
