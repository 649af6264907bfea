use thiserror::Error;

/// Errors produced by the analytic routines and the simulator.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("argument out of domain: {0}")]
    Domain(String),

    /// `lambda_hat` exceeds 1/e, so `p = exp(-lambda_hat / p)` has no real root.
    #[error("no stable point: aggregate input rate {lambda_hat} exceeds 1/e")]
    NoStablePoint { lambda_hat: f64 },

    /// Unbounded cutoff with `q <= 1 - p`: the mean service time diverges.
    #[error("mean service time diverges (q = {q} <= 1 - p = {})", 1.0 - .p)]
    DivergentMean { p: f64, q: f64 },

    #[error("no closed form for this policy: {0}")]
    UnsupportedK(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invariant violated at slot {slot}: {detail}")]
    InvariantViolation { slot: u64, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;
