use thiserror::Error;

/// Errors raised across the crate.
///
/// Each variant belongs to one of three classes (see [`ErrorClass`]) that the
/// command-line front end maps onto process exit codes.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("point {point:?} is not on the boundary (signed distance {distance:e})")]
    NotOnBoundary { point: Vec<f64>, distance: f64 },

    #[error("collar width {width} is not injective for this boundary")]
    CollarTooWide { width: f64 },

    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),

    #[error("collar under-resolved: {0}")]
    CollarUnderResolved(String),

    #[error("coordinate change has a singular Jacobian at {point:?}")]
    SingularJacobian { point: Vec<f64> },

    #[error("degenerate initial pressure: min(v0 + |grad v0|^2) = {min:e} below threshold {threshold:e}")]
    DegenerateData { min: f64, threshold: f64 },

    #[error("matrix C is singular at node {node} (det = {det:e})")]
    SingularC { node: usize, det: f64 },

    #[error("denominator of F is not positive at node {node} (value {value:e})")]
    NonpositiveDenominator { node: usize, value: f64 },

    #[error("no root of the height relation inside the tube at node {node}")]
    NoRootInTube { node: usize },

    #[error("height relation has {count} roots inside the tube at node {node}")]
    MultipleRoots { node: usize, count: usize },

    #[error("height function left the admissible tube: max|h| = {max_abs:e} >= {tube:e}")]
    TubeExceeded { max_abs: f64, tube: f64 },

    #[error("linear solve failed: {reason} (condition estimate {condition_estimate:e})")]
    LinearSolveFailed { reason: String, condition_estimate: f64 },

    #[error("precondition refused: {0}")]
    PreconditionRefused(String),

    #[error("shifted residual is not flat at the junction: {0}")]
    JetNotFlat(String),

    #[error("manufactured forcing violates condition (C): {0}")]
    NotFlatAtZero(String),

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("parse error at position {position}: {message}")]
    ParseError { position: usize, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse taxonomy of failures, used for exit codes and manifests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorClass {
    Config,
    Precondition,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::ConfigInvalid(_) | Error::ParseError { .. } | Error::Io(_) => ErrorClass::Config,
            Error::PreconditionRefused(_)
            | Error::NotFlatAtZero(_)
            | Error::DegenerateData { .. }
            | Error::CollarTooWide { .. }
            | Error::GridTooCoarse(_)
            | Error::CollarUnderResolved(_)
            | Error::InvalidInput(_)
            | Error::NotOnBoundary { .. } => ErrorClass::Precondition,
            _ => ErrorClass::Numerical,
        }
    }

    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NotOnBoundary { .. } => "NotOnBoundary",
            Error::CollarTooWide { .. } => "CollarTooWide",
            Error::GridTooCoarse(_) => "GridTooCoarse",
            Error::CollarUnderResolved(_) => "CollarUnderResolved",
            Error::SingularJacobian { .. } => "SingularJacobian",
            Error::DegenerateData { .. } => "DegenerateData",
            Error::SingularC { .. } => "SingularC",
            Error::NonpositiveDenominator { .. } => "NonpositiveDenominator",
            Error::NoRootInTube { .. } => "NoRootInTube",
            Error::MultipleRoots { .. } => "MultipleRoots",
            Error::TubeExceeded { .. } => "TubeExceeded",
            Error::LinearSolveFailed { .. } => "LinearSolveFailed",
            Error::PreconditionRefused(_) => "PreconditionRefused",
            Error::JetNotFlat(_) => "JetNotFlat",
            Error::NotFlatAtZero(_) => "NotFlatAtZero",
            Error::ConfigInvalid(_) => "ConfigInvalid",
            Error::ParseError { .. } => "ParseError",
            Error::InvalidInput(_) => "InvalidInput",
            Error::Io(_) => "Io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
