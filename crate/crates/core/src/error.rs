use thiserror::Error;

/// Errors raised by the library.
///
/// Variants are split so that callers can tell input problems (bad files,
/// malformed configs) from domain problems (degenerate geometry, empty
/// masks). The CLI maps the first group to exit code 2 and the second to 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid rigid transform: {0}")]
    InvalidTransform(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("no valid pixels: {0}")]
    Empty(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("optimization diverged at step {step}: {trace}")]
    Diverged { step: usize, trace: String },
    #[error("malformed file: {0}")]
    Format(String),
    #[error("{}: {source}", path.display())]
    File {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by unreadable or malformed inputs rather than
    /// by the numerical content of valid inputs.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Format(_)
                | Error::File { .. }
                | Error::Io(_)
                | Error::Json(_)
                | Error::Config(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
