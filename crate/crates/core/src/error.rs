//! Error type shared by every stage of the pipeline.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Grid shapes or field lengths do not line up.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A parameter or grid description is invalid.
    #[error("configuration error: {0}")]
    Config(String),

    /// A field file could not be decoded; `offset` is the byte position
    /// at which decoding failed.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    /// Measured data violate a validity assumption (e.g. the lower bound
    /// on |p1|, |p2|).
    #[error("data validity error: {0}")]
    DataValidity(String),

    /// The explicit part of the forward scheme would be unstable.
    #[error("stability violation: time step {ht} exceeds admissible {ht_max}")]
    Stability { ht: f64, ht_max: f64 },

    /// The forward march produced a non-finite value.
    #[error("divergence at time step {step}: {0}", .message)]
    Divergence { step: usize, message: String },

    /// A pointwise evaluation produced a non-finite value.
    #[error("evaluation error at node {node}: {message}")]
    Evaluation { node: usize, message: String },

    /// A linear system could not be assembled.
    #[error("assembly error: {0}")]
    Assembly(String),

    /// An iterative solver hit its iteration cap; carries the residual
    /// history for diagnosis.
    #[error("convergence error: {message} (last residual {last:e})")]
    Convergence {
        message: String,
        last: f64,
        history: Vec<f64>,
    },

    /// The theory parameter schedule is not applicable to this geometry.
    #[error("schedule error: {0}")]
    Schedule(String),

    /// A gradient descent step increased the functional.
    #[error("step-size error: functional increased at step {gamma}; retry with {suggested}")]
    StepSize { gamma: f64, suggested: f64 },

    /// A bundle does not match the content hash recorded by its producer.
    #[error("provenance error: {0}")]
    Provenance(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
