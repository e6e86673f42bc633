//! Error type shared across the crate.

use thiserror::Error;

/// Errors raised by samplers, oracles and numerical routines.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument was outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A model or network could not be constructed from the given inputs.
    #[error("construction error: {0}")]
    Construction(String),

    /// SDE or ODE integration visited a non-finite state.
    #[error("simulation error at step {step}: {msg}")]
    Simulation { step: usize, msg: String },

    /// A training loop produced a non-finite loss or gradient.
    #[error("training error at iteration {iteration}: {msg}")]
    Training { iteration: usize, msg: String },

    /// An iterative-proportional-fitting half step failed.
    #[error("IPF error at round {round} ({direction}): {msg}")]
    Ipf {
        round: usize,
        direction: &'static str,
        msg: String,
    },

    /// Sinkhorn iterations did not reach the requested marginal tolerance.
    #[error("Sinkhorn did not converge after {iterations} iterations (marginal gap {gap:.3e})")]
    SinkhornDiverged { iterations: usize, gap: f64 },

    /// An operation is unsupported for the given model or dimension.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Checkpoint or artifact I/O failed.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// A stored checkpoint did not match the expected layout.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Metric evaluation was asked for something it cannot compute.
    #[error("metrics error: {0}")]
    Metrics(String),
}
