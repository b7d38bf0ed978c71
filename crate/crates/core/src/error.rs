//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the toolkit.
///
/// The variants are grouped so that callers (in particular the CLI) can map
/// them onto coarse failure classes: invalid input, resource caps, failed
/// convergence gates, and I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid geometry: out-of-range coordinates, empty regions, mismatched
    /// dimensions, malformed boxes.
    #[error("geometry error: {0}")]
    Geometry(String),

    /// Invalid model parameters or an operation applied to an unsupported
    /// model variant.
    #[error("model error: {0}")]
    Model(String),

    /// A vertex lookup failed: the configuration or field does not cover a
    /// required vertex.
    #[error("missing vertex {vertex:?}: {context}")]
    MissingVertex { vertex: [i64; 4], context: String },

    /// An exact computation would exceed the configured enumeration cap.
    #[error("enumeration cap exceeded: {0}")]
    CapExceeded(String),

    /// Invalid function-class input to the convex-stability machinery.
    #[error("function class error: {0}")]
    FunctionClass(String),

    /// An MCMC convergence gate failed; the partial diagnostic is included.
    #[error("convergence gate failed: {0}")]
    Convergence(String),

    /// Invalid experiment configuration.
    #[error("config error: {0}")]
    Config(String),

    /// A verified numeric post-condition failed (an internal cross-check
    /// caught an inconsistency).
    #[error("numeric check failed: {0}")]
    NumericCheck(String),

    /// Filesystem or serialization failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// CSV serialization failure.
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    /// JSON serialization failure.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn geometry(msg: impl Into<String>) -> Self {
        Error::Geometry(msg.into())
    }

    pub fn model(msg: impl Into<String>) -> Self {
        Error::Model(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
