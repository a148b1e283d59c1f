//! Error type shared by all mechanisms.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DmeError {
    /// A parameter is outside its admissible range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The privacy budget is too small for the requested configuration
    /// (the solved flip probability degenerates to a fair coin).
    #[error("budget too small: {0}")]
    BudgetTooSmall(String),

    /// A received message does not fit the declared plan (bad coordinate,
    /// inconsistent public parameters, wrong level count, ...).
    #[error("malformed message: {0}")]
    MalformedMessage(String),

    /// An input vector violates its declared norm ball.
    #[error("input outside domain: {0}")]
    InputOutsideDomain(String),

    /// An RDP curve was queried at an order outside its admissible range.
    #[error("RDP order out of range: {0}")]
    OrderOutOfRange(String),

    /// No admissible Rényi order remains after intersecting validity ranges.
    #[error("insufficient amplification range: {0}")]
    InsufficientRange(String),

    /// Certification against a privacy target failed; carries the achieved value.
    #[error("certification failed: achieved {achieved:.6} > target {target:.6}")]
    CertificationFailed { achieved: f64, target: f64 },

    /// Serialization or deserialization of the wire format failed.
    #[error("wire format error: {0}")]
    Wire(String),
}

pub type Result<T> = std::result::Result<T, DmeError>;
