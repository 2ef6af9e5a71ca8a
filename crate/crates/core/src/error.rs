use thiserror::Error;

/// Errors raised by the model, optimizer and receiver.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum IsacError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid path set: {0}")]
    InvalidPaths(String),

    #[error("invalid waveform: {0}")]
    InvalidWaveform(String),

    /// Squared effective bandwidth is zero, so the delay CRB is infinite.
    #[error("sensing is infeasible: squared effective bandwidth is zero")]
    InfeasibleSensing,

    #[error("no sensing subcarrier carries power")]
    EmptySensingSet,

    /// Water-filling level is unbounded when the power price is zero.
    #[error("dual variable lambda is zero; water level is unbounded")]
    LambdaZero,

    #[error("found {found} spatial peaks but {expected} paths were requested")]
    FewerPeaksThanPaths { found: usize, expected: usize },

    #[error("delay grid too coarse: {points_per_mainlobe} points per mainlobe, need at least 4")]
    CoarseDelayGrid { points_per_mainlobe: usize },
}

pub type Result<T> = std::result::Result<T, IsacError>;
