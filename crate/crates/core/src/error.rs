//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by model evaluation, integration, and stability analysis.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A parameter violates its positivity/finiteness constraint.
    #[error("invalid parameter {name} = {value}: {constraint}")]
    InvalidParam {
        name: &'static str,
        value: f64,
        constraint: &'static str,
    },

    /// An input lies outside the mathematical domain of an operation.
    #[error("domain error in {op}: {reason}")]
    Domain { op: &'static str, reason: String },

    /// Integration stopped before reaching the requested horizon.
    #[error("integration aborted at t = {t}: {reason}")]
    IntegrationAborted { t: f64, reason: String },

    /// Dense-output evaluation outside the covered time span.
    #[error("time {t} outside dense-output range [{min}, {max}]")]
    OutOfRange { t: f64, min: f64, max: f64 },

    /// The winding-number contour could not be certified root-free.
    #[error("root-counting contour failed: {0}")]
    Contour(String),

    /// Trajectory classification window has too few grid nodes.
    #[error("classification window holds {nodes} nodes, need at least {min}")]
    WindowTooShort { nodes: usize, min: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
