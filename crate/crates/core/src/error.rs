use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("curve lives on a different grid than expected")]
    GridMismatch,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("spot price must be positive, got {0}")]
    NonPositiveSpot(f64),

    #[error("negative discriminant L = {0}: square root is not real")]
    DegenerateRoot(f64),

    #[error("time to maturity must be positive (t = {t}, T = {maturity})")]
    NonPositiveTimeToMaturity { t: f64, maturity: f64 },

    #[error("negative total implied variance {xi} at t = {t}")]
    NegativeXi { xi: f64, t: f64 },

    #[error("non-finite {what} at step {step}")]
    NumericalBlowup { step: usize, what: &'static str },

    #[error("path {path}: {source}")]
    PathFailed {
        path: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("insufficient sample: {got} paths, need at least {need}")]
    InsufficientSample { got: usize, need: usize },

    #[error("path record lacks {0}")]
    MissingData(&'static str),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True when the error comes from a non-finite value inside the scheme.
    pub fn is_blowup(&self) -> bool {
        match self {
            Error::NumericalBlowup { .. } => true,
            Error::PathFailed { source, .. } => source.is_blowup(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
