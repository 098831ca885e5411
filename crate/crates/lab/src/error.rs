use std::path::PathBuf;

/// Errors surfaced by the std-side tooling, each mapped to a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("line {line}: parse error: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: schema error in field `{field}`: {message}")]
    Schema { line: usize, field: String, message: String },
    #[error("line {line}: raw_score {value} outside [{min}, {max}]")]
    OutOfRange { line: usize, value: f64, min: f64, max: f64 },
    #[error("empty file: {0}")]
    EmptyFile(PathBuf),
    #[error("missing artifact: {0}")]
    MissingArtifact(PathBuf),
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Core(#[from] una_core::Error),
}

pub type LabResult<T> = Result<T, LabError>;

pub const EXIT_OK: i32 = 0;
pub const EXIT_PROPERTY: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

impl LabError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LabError::Io { path: path.into(), source }
    }

    /// 2 for anything wrong with the inputs (including missing or corrupt
    /// files), 3 for failures while running.
    pub fn exit_code(&self) -> i32 {
        use una_core::Error as E;
        match self {
            LabError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => EXIT_VALIDATION,
            LabError::Io { .. } => EXIT_RUNTIME,
            LabError::Core(E::NonFiniteGradient | E::NonFiniteTilt | E::NonFiniteEvaluation | E::NonFiniteReward) => EXIT_RUNTIME,
            _ => EXIT_VALIDATION,
        }
    }
}
