use thiserror::Error;

use crate::measures::GridMeasure;

/// Errors raised by the numerical lab.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("degenerate domain: {0}")]
    DegenerateDomain(String),

    #[error("domain too narrow: tail mass {tail_mass:.3e} exceeds {limit:.0e}")]
    DomainTooNarrow { tail_mass: f64, limit: f64 },

    #[error("invalid density: {0}")]
    InvalidDensity(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("probability {0} outside [0, 1]")]
    ProbabilityOutOfRange(f64),

    #[error("non-a.c. source: {0}")]
    NonAcSource(String),

    #[error("infinite-Fischer surrogate: {0}")]
    InfiniteFischer(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("solver diverged at t = {time}: {reason}")]
    Diverged {
        time: f64,
        reason: String,
        /// Last finite snapshot before the failure.
        snapshot: Option<Box<GridMeasure>>,
    },

    #[error("tail contact at t = {time}: boundary density {density:.3e}")]
    TailContact { time: f64, density: f64 },

    #[error("legendre maximizer escaped bracket at x = {x}, q = {q}")]
    BracketEscape { x: f64, q: f64 },

    #[error("path/control inconsistency: {0}")]
    PathControlMismatch(String),

    #[error("stagnation: {0}")]
    Stagnation(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;
