use std::fmt;
use std::path::PathBuf;

use crate::facemesh::SimilarityTransform;

/// Location of a parse failure inside an input artifact.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Position {
    Line(usize),
    Byte(usize),
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Position::Line(n) => write!(f, "line {n}"),
            Position::Byte(n) => write!(f, "byte {n}"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("vector is not unit length (norm = {norm})")]
    NonUnitInput { norm: f64 },
    #[error("invalid direction (pitch = {pitch}, yaw = {yaw})")]
    InvalidDirection { pitch: f64, yaw: f64 },
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("vertex {index} is behind the camera (z = {z})")]
    BehindCamera { index: usize, z: f64 },
    #[error("need at least {min} landmarks, got {got}")]
    TooFewLandmarks { got: usize, min: usize },
    #[error("normal equations are singular (rank-deficient Jacobian)")]
    SingularNormalEquations,
    #[error("no convergence after {iterations} iterations (residual {residual})")]
    NoConvergence {
        last: Box<SimilarityTransform>,
        residual: f64,
        iterations: usize,
    },
    #[error("background pool is empty")]
    EmptyPool,
    #[error("no subject has at least {min} samples")]
    EmptyAfterFilter { min: usize },
    #[error("{factor} label mismatch: mesh and manifest differ by {degrees:.3} degrees")]
    LabelMismatch { factor: &'static str, degrees: f64 },
    #[error("render failure: {0}")]
    RenderFailure(String),
    #[error("missing {0} target")]
    MissingTarget(&'static str),
    #[error("missing factor '{0}' in latent state")]
    MissingFactor(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("image too small: {width}x{height}, need at least {min} on each side")]
    TooSmall {
        width: usize,
        height: usize,
        min: usize,
    },
    #[error("zero-norm vector")]
    ZeroVector,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("need at least {min} rows, got {rows}")]
    TooFewRows { rows: usize, min: usize },
    #[error("no records to report")]
    EmptyRun,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{source_name}: {position}: {message}")]
    Parse {
        source_name: String,
        position: Position,
        message: String,
    },
    #[error("unsupported version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{0}")]
    Interface(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(
        source_name: impl Into<String>,
        position: Position,
        message: impl Into<String>,
    ) -> Self {
        Error::Parse {
            source_name: source_name.into(),
            position,
            message: message.into(),
        }
    }

    /// True for failures caused by malformed or unreadable inputs.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::VersionMismatch { .. }
                | Error::Io { .. }
                | Error::Image { .. }
                | Error::InvalidArgument(_)
                | Error::EmptyAfterFilter { .. }
                | Error::DimensionMismatch(_)
                | Error::TooFewRows { .. }
                | Error::EmptyPool
                | Error::EmptyRun
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
