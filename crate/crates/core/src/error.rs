use thiserror::Error;

use crate::matlib::MatrixError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Matrix(#[from] MatrixError),

    #[error("unstable spec: eigenvalue {0} has magnitude >= 1")]
    UnstableSpec(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid topology: {0}")]
    Topology(String),

    #[error("horizon too short: T = {horizon} holds no full block of {block} samples")]
    HorizonTooShort { horizon: usize, block: usize },

    #[error("trajectory too short: need {needed} states, have {available}")]
    TrajectoryTooShort { needed: usize, available: usize },

    #[error("agent {agent}: estimated radius is zero, step size 1/(2R) undefined")]
    ZeroRadius { agent: usize },

    #[error("divergence at buffer {buffer}, step {step}, agent {agent}")]
    Divergence {
        buffer: usize,
        step: usize,
        agent: usize,
    },

    #[error("singular covariance: {0}")]
    Singular(String),

    #[error("event D̃ never held in {attempts} attempts; raise R")]
    EventNeverHeld { attempts: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("trajectory file: {0}")]
    TrajectoryFormat(String),

    #[error("{context}: {source}")]
    Run {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        if let Error::Run { source, .. } = self {
            return source.is_numerical();
        }
        matches!(
            self,
            Error::Matrix(_) | Error::Divergence { .. } | Error::Singular(_) | Error::ZeroRadius { .. } | Error::EventNeverHeld { .. }
        )
    }

    /// Wraps `self` with a description of the run that failed.
    pub fn in_run(self, context: impl Into<String>) -> Self {
        Error::Run {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
