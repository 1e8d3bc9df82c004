//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid rates: {0}")]
    InvalidRates(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("graph is not strongly connected")]
    NotStronglyConnected,

    #[error("support {{{support}}} of the target distribution is not strongly connected")]
    SupportNotStronglyConnected {
        /// 1-based vertex list, comma separated, for diagnostics.
        support: String,
    },

    #[error("no unique stationary distribution: zero eigenvalue has multiplicity {multiplicity}")]
    NoUniqueStationary { multiplicity: usize },

    #[error("state left the simplex at t = {time}: {detail}")]
    SimplexViolation { time: f64, detail: String },

    #[error(
        "steering phase cap of {cap} time units exceeded: reached L1 distance {achieved}, target {eps}"
    )]
    SteeringCapExceeded { cap: f64, achieved: f64, eps: f64 },

    #[error("infeasible: {0}")]
    Infeasible(String),
}

pub type Result<T> = std::result::Result<T, Error>;
