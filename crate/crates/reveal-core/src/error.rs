//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by map construction, sampling, training and evaluation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("cell index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("transmitter singularity: field evaluated at zero distance from the transmitter")]
    TransmitterSingularity,

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("point outside grid extent: {0}")]
    OutsideExtent(String),

    #[error("degenerate neighborhood: {0}")]
    DegenerateNeighborhood(String),

    #[error("singular linear system: {0}")]
    SingularSystem(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}: {message}")]
    Divergence { epoch: usize, message: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

pub type Result<T> = std::result::Result<T, Error>;
