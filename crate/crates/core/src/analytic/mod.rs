//! Closed-form and recurrence analysis of the decomposed node queues.
//!
//! Everything here is a pure function of its arguments.

mod delay;
mod fixed_point;
mod moments;

pub use delay::{
    closed_form_delay, exponential_at_robust_q, geometric_at_inverse_n, mean_delays, pk_mean_delay, Delay, Divergence,
    MeanDelays,
};
pub use fixed_point::{solve_success_probability, FixedPoint, MAX_STABLE_THROUGHPUT};
pub use moments::{
    phase_distribution, phase_distribution_capped, recurrence, service_moments, sojourn_moments, Moment,
    ServiceMoments, SojournMoments,
};

/// Numerical tolerances used by solvers and self-consistency checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Absolute tolerance for scalar root finding.
    pub root: f64,
    /// Relative tolerance when two analytic routes are compared.
    pub consistency: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { root: 1e-13, consistency: 1e-9 }
    }
}

/// Relative gap `|a - b| / max(|a|, |b|)`, zero when both vanish.
pub fn relative_gap(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}
