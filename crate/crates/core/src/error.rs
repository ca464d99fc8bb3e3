use std::path::PathBuf;

/// Errors produced across the toolkit.
///
/// Variants map one-to-one onto the failure kinds callers are expected to
/// branch on; everything else is folded into `Io` or `Image`.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("input too small: {0}")]
    TooSmallInput(String),

    #[error("poisson solver failed to converge after {iterations} iterations (relative residual {residual:e})")]
    SolverFailed { iterations: usize, residual: f64 },

    #[error("face backend error: {0}")]
    Backend(String),

    #[error("degenerate landmarks: {0}")]
    DegenerateLandmarks(String),

    #[error("degenerate profile: {0}")]
    DegenerateProfile(String),

    #[error("generator unreachable: {0}")]
    GeneratorUnreachable(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("generation failed: {0}")]
    GenerationFailed(String),

    #[error("two-step generation failed: {reason} (step-1 output kept at {step1_output:?})")]
    TwoStepFailed {
        reason: String,
        step1_output: Option<PathBuf>,
    },

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
