use std::fmt;
use std::io;

/// Errors produced by the camouflage pipeline.
#[derive(Debug)]
pub enum Error {
    /// Malformed mesh file; `line` is 1-based.
    Parse { line: usize, message: String },
    /// A value or argument violated an operation's precondition.
    Invalid(String),
    /// Two arrays that must agree in shape did not.
    Shape { expected: String, found: String },
    /// The camera sits inside the mesh bounding sphere.
    DegenerateViewpoint { distance: f64, radius: f64 },
    /// ASR has no correctly detected clean image to normalize by.
    UndefinedAsr,
    /// A NaN or infinity appeared in a gradient or loss.
    NonFinite(&'static str),
    /// A prerequisite artifact (manifest, weights, texture) is missing.
    Missing(String),
    Io(io::Error),
    Json(serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn shape(expected: impl fmt::Display, found: impl fmt::Display) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Parse { line, message } => write!(f, "line {line}: {message}"),
            Error::Invalid(msg) => write!(f, "invalid argument: {msg}"),
            Error::Shape { expected, found } => {
                write!(f, "shape mismatch: expected {expected}, found {found}")
            }
            Error::DegenerateViewpoint { distance, radius } => write!(
                f,
                "degenerate viewpoint: camera distance {distance} is inside the bounding sphere (radius {radius})"
            ),
            Error::UndefinedAsr => {
                write!(f, "undefined ASR: no clean image was correctly detected")
            }
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Error::Missing(what) => write!(f, "missing prerequisite: {what}"),
            Error::Io(e) => write!(f, "i/o error: {e}"),
            Error::Json(e) => write!(f, "json error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            Error::Json(e) => Some(e),
            _ => None,
        }
    }
}

impl From<io::Error> for Error {
    fn from(e: io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e)
    }
}
