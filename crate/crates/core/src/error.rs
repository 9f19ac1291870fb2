use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("degenerate quaternion (zero or non-finite norm)")]
    DegenerateQuaternion,
    #[error("degenerate geometry: {0}")]
    Degenerate(&'static str),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("joint vector tagged `{got}` used with chain `{expected}`")]
    ChainMismatch { expected: String, got: String },
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid chain `{chain}`: {reason}")]
    InvalidChain { chain: String, reason: String },
    #[error("non-finite input")]
    NonFinite,
    #[error(transparent)]
    Geom(#[from] GeomError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("keypoint set must hold 21 finite points")]
    BadKeypoints,
    #[error("degenerate hand geometry: {0}")]
    Degenerate(&'static str),
    #[error("no camera views the palm at a usable angle")]
    NoReliableView,
    #[error("no camera detected the hand")]
    NoDetection,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetargetError {
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error("expected {expected} keypoint vectors, got {got}")]
    VectorCount { expected: usize, got: usize },
    #[error("invalid retarget parameters: {0}")]
    BadParams(&'static str),
    #[error("no grasp templates in the active set")]
    EmptyActiveSet,
    #[error("unknown grasp template `{0}`")]
    UnknownTemplate(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ComplianceError {
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error("invalid coupling parameters: {0}")]
    BadParams(&'static str),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TeleopError {
    #[error("arm {0} has never been clutched; no saved poses")]
    NotInitialized(&'static str),
}

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported format version {found} (supported: {supported})")]
    UnsupportedFormat { found: String, supported: u32 },
    #[error("invalid content: {0}")]
    Invalid(String),
}

impl FormatError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FormatError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(line: usize, message: impl Into<String>) -> Self {
        FormatError::Parse {
            line,
            message: message.into(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("insufficient data: found {found} breaths, need at least 2")]
    InsufficientBreaths { found: usize },
}

/// Top-level error for the runner and CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Retarget(#[from] RetargetError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Compliance(#[from] ComplianceError),
    #[error(transparent)]
    Teleop(#[from] TeleopError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("bridge startup failed: {0}")]
    Startup(#[source] std::io::Error),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl Error {
    /// Stable process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Format(FormatError::Io { .. }) => 2,
            Error::Format(_) => 3,
            _ => 4,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
