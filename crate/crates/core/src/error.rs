use thiserror::Error;

use crate::geometry::Geodesic;
use crate::spectral::EigenResult;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("model degenerate: {0}")]
    ModelDegenerate(String),

    /// The operation is undefined on the zero section (v = 0 or du = 0).
    #[error("undefined on the zero section")]
    ZeroSection,

    #[error("{what} did not converge (best value {best:.6e}, residual {residual:.3e})")]
    NumericalFailure { what: String, best: f64, residual: f64 },

    #[error("legendre transform failed at node {node}: {source}")]
    AtNode {
        node: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("eigen-iteration did not converge after {} iterations (residual {:.3e})", .0.iterations, .0.residual)]
    EigenNotConverged(Box<EigenResult>),

    #[error("trajectory left the chart domain at t = {}", .partial.times.last().copied().unwrap_or(0.0))]
    DomainExit { partial: Box<Geodesic> },

    #[error("no connecting curve inside the chart domain")]
    NoConnectingCurve,

    #[error("invalid decomposition: {0}")]
    InvalidDecomposition(String),

    #[error("stage `{stage}` failed: value {value:.3e} exceeds tolerance {tolerance:.1e}")]
    StageFailed { stage: String, value: f64, tolerance: f64 },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::ModelDegenerate(msg.into())
    }
}
