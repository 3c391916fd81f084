use alloc::string::String;
use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid value: {0}")]
    Validation(String),
    #[error("unsupported orientation: {0}")]
    UnsupportedOrientation(String),
    #[error("insufficient extent: {0}")]
    InsufficientExtent(String),
    #[error("no slice has a score within [{lo}, {hi}]")]
    EmptyCrop { lo: f64, hi: f64 },
    #[error("fixed and moving volumes do not overlap in world space")]
    NoOverlap,
    #[error("degenerate affine fit: {0}")]
    DegenerateFit(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("graph error: {0}")]
    Graph(String),
    #[error("transform is singular")]
    SingularTransform,
    #[error(
        "field inversion diverged after {iterations} iterations \
         (mean residual {mean_residual:.4}, max residual {max_residual:.4})"
    )]
    NonInvertibleField {
        iterations: usize,
        mean_residual: f64,
        max_residual: f64,
    },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("insufficient cohort: need at least {needed} volumes, got {got}")]
    InsufficientCohort { needed: usize, got: usize },
    #[error("undefined distance: {0}")]
    UndefinedDistance(&'static str),
    #[error("all paired differences are zero")]
    DegenerateSample,
    #[error("need at least {needed} non-zero paired differences, got {got}")]
    InsufficientSample { needed: usize, got: usize },
}
