use thiserror::Error;

/// Errors raised by the engines, the analysis routines and the orchestrator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid circuit specification: {0}")]
    InvalidSpec(String),

    #[error("index {index} out of range for {what} (limit {limit})")]
    OutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("state too large: {sites} sites exceeds the {engine} limit of {limit}")]
    TooLarge {
        engine: &'static str,
        sites: usize,
        limit: usize,
    },

    #[error("sampled a measurement branch with probability {prob:e} at site {site}")]
    ZeroProbabilityBranch { site: usize, prob: f64 },

    #[error("rank collapse on bond {bond}: every singular value fell below tolerance")]
    RankCollapse { bond: usize },

    #[error("total density {total:e} is below the vanishing-density guard")]
    VanishingDensity { total: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("explicit step is unstable: {0}")]
    UnstableStep(String),

    #[error("fit did not converge: {0}")]
    NonConvergence(String),

    #[error("candidate pool is empty")]
    EmptyPool,

    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("realization {realization}, trajectory {trajectory}: {source}")]
    AtCoordinates {
        realization: usize,
        trajectory: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Whether the error stems from configuration rather than from running an engine.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidSpec(_) | Error::Parse(_) | Error::Validation(_) | Error::TooLarge { .. }
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
