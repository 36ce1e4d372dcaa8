use std::fmt;
use std::path::Path;

/// Error category; each maps to a fixed process exit code so scripts can
/// distinguish failure modes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    /// A referenced file could not be read or written.
    Io,
    /// Malformed input: bad JSON, bad CSV structure, or a non-numeric cell.
    Parse,
    /// Structurally sound input with invalid content: missing columns,
    /// non-finite values, out-of-range settings.
    Validation,
    /// A model artifact is missing, malformed, or fails its checksum.
    ModelArtifact,
    /// An iterative solver or factorization failed on valid input.
    Numerical,
    /// A bug: a panic was caught before reaching the user.
    Internal,
}

impl ErrorKind {
    pub fn exit_code(self) -> u8 {
        match self {
            ErrorKind::Io => 3,
            ErrorKind::Parse => 4,
            ErrorKind::Validation => 5,
            ErrorKind::ModelArtifact => 6,
            ErrorKind::Numerical => 7,
            ErrorKind::Internal => 70,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorKind::Io => "io",
            ErrorKind::Parse => "parse",
            ErrorKind::Validation => "validation",
            ErrorKind::ModelArtifact => "model_artifact",
            ErrorKind::Numerical => "numerical",
            ErrorKind::Internal => "internal",
        }
    }
}

#[derive(Clone, Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, err: &std::io::Error) -> Self {
        Self::new(ErrorKind::Io, format!("{}: {err}", path.display()))
    }

    pub fn parse(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Parse, message)
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Validation, message)
    }

    pub fn model(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::ModelArtifact, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Internal, message)
    }

    pub fn exit_code(&self) -> u8 {
        self.kind.exit_code()
    }

    /// Writes the structured error document to standard error.
    pub fn emit(&self) {
        let doc = serde_json::json!({
            "error": {
                "kind": self.kind.name(),
                "message": self.message,
                "exit_code": self.exit_code(),
            }
        });
        eprintln!("{doc}");
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind.name(), self.message)
    }
}

impl From<skipgp::Error> for CliError {
    fn from(err: skipgp::Error) -> Self {
        let kind = match &err {
            skipgp::Error::NumericalBreakdown { .. }
            | skipgp::Error::CgDidNotConverge { .. }
            | skipgp::Error::FactorizationFailed(_) => ErrorKind::Numerical,
            skipgp::Error::Serialization(_) => ErrorKind::Parse,
            _ => ErrorKind::Validation,
        };
        Self::new(kind, err.to_string())
    }
}
