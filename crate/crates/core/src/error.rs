use alloc::string::String;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("degenerate look-at: up vector parallel to viewing direction or eye equals target")]
    DegenerateLookAt,
    #[error("degenerate triangulation: {0}")]
    DegenerateTriangulation(&'static str),
    #[error("every match in the pair failed to triangulate")]
    AllMatchesDegenerate,
    #[error("no valid pairs: every view pair was rejected")]
    NoValidPairs,
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("dimension {dim} not divisible by {factor}")]
    NotDivisible { dim: usize, factor: usize },
    #[error("conditioning does not match model mode: {0}")]
    ModeMismatch(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn shape_err(expected: impl core::fmt::Display, got: impl core::fmt::Display) -> Error {
    use alloc::string::ToString;
    Error::ShapeMismatch {
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
