//! Mean access and queueing delay of the decomposed Geo/G/1 queues.

use std::f64::consts::E;
use std::fmt;

use crate::analytic::moments::{service_moments, Moment, ServiceMoments};
use crate::error::{Error, Result};
use crate::policy::{Cutoff, Model, Scenario};

/// Why a mean delay is infinite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Divergence {
    /// Offered load `lambda * E[X] >= 1`.
    UnstableQueue,
    /// The service time has an infinite second moment.
    DivergentSecondMoment,
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Divergence::UnstableQueue => "offered load >= 1",
            Divergence::DivergentSecondMoment => "service time second moment diverges (q <= sqrt(1 - p))",
        })
    }
}

/// A mean delay in slots, or a marker that it is unbounded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Delay {
    Finite(f64),
    Infinite(Divergence),
}

impl Delay {
    pub fn finite(self) -> Option<f64> {
        match self {
            Delay::Finite(v) => Some(v),
            Delay::Infinite(_) => None,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Delay::Finite(_))
    }
}

impl fmt::Display for Delay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Delay::Finite(v) => write!(f, "{v}"),
            Delay::Infinite(_) => f.write_str("INF"),
        }
    }
}

/// Mean access delay `E[X]` and mean queueing delay `E[T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanDelays {
    pub access: f64,
    pub queueing: Delay,
}

/// Pollaczek-Khinchine mean sojourn of a Geo/G/1 queue:
/// `E[T] = m1 + lambda m2 / (2 (1 - lambda m1))`.
pub fn pk_mean_delay(lambda: f64, moments: &ServiceMoments) -> Result<Delay> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(Error::Domain(format!("per-node input rate must lie in [0, 1), got {lambda}")));
    }
    let load = lambda * moments.m1;
    if load >= 1.0 {
        return Ok(Delay::Infinite(Divergence::UnstableQueue));
    }
    match moments.m2 {
        Moment::Divergent => Ok(Delay::Infinite(Divergence::DivergentSecondMoment)),
        Moment::Finite(m2) => Ok(Delay::Finite(moments.m1 + lambda * m2 / (2.0 * (1.0 - load)))),
    }
}

/// Mean delays by the printed closed forms for geometric retransmission
/// (`K = 1`) and exponential backoff (`K = inf`), either model.
///
/// The window-model forms assume the real-valued `2/q^i - 1` windows. Other
/// cutoffs go through [`pk_mean_delay`] over
/// [`service_moments`](crate::analytic::service_moments).
pub fn closed_form_delay(scenario: &Scenario, p: f64) -> Result<MeanDelays> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Domain(format!("success probability must lie in (0, 1], got {p}")));
    }
    let policy = &scenario.policy;
    let lambda = scenario.lambda;
    let q = policy.q;
    let fail = 1.0 - p;
    if policy.model == Model::Window && !policy.has_standard_windows() {
        return Err(Error::UnsupportedK("closed forms need the real-valued 2/q^i - 1 windows".into()));
    }
    match (policy.cutoff, policy.model) {
        (Cutoff::Finite(1), Model::Probability) => {
            let access = 1.0 + fail / (p * q);
            let denom = p * q - lambda * fail / (1.0 - lambda);
            let queueing = if denom <= 0.0 {
                Delay::Infinite(Divergence::UnstableQueue)
            } else {
                Delay::Finite(1.0 + 1.0 / denom - 1.0 / q)
            };
            Ok(MeanDelays { access, queueing })
        }
        (Cutoff::Finite(1), Model::Window) => {
            let m1 = 1.0 + fail / (p * q);
            let m2 = 2.0 * fail / ((p * q) * (p * q)) * (1.0 - p / 3.0 + p * q / 3.0);
            let moments = ServiceMoments { m1, m2: Moment::Finite(m2) };
            Ok(MeanDelays { access: m1, queueing: pk_mean_delay(lambda, &moments)? })
        }
        (Cutoff::Unbounded, model) => {
            let excess = p + q - 1.0;
            if excess <= 0.0 {
                return Err(Error::DivergentMean { p, q });
            }
            let access = 1.0 + fail / excess;
            let stable_denom = excess - lambda * q;
            let queueing = if stable_denom <= 0.0 {
                Delay::Infinite(Divergence::UnstableQueue)
            } else if p + q * q - 1.0 <= 0.0 {
                Delay::Infinite(Divergence::DivergentSecondMoment)
            } else {
                let scale = match model {
                    Model::Probability => 1.0,
                    Model::Window => (2.0 + q) / 3.0,
                };
                let extra = lambda * fail * q / (stable_denom * (p + q * q - 1.0));
                Delay::Finite(access + scale * extra)
            };
            Ok(MeanDelays { access, queueing })
        }
        (Cutoff::Finite(k), _) => Err(Error::UnsupportedK(format!(
            "no closed form for cutoff K = {k}; use pk_mean_delay over service_moments"
        ))),
    }
}

/// Mean delays through the generic route: P-K over the service moments.
pub fn mean_delays(scenario: &Scenario, p: f64) -> Result<MeanDelays> {
    let moments = service_moments(&scenario.policy, p)?;
    Ok(MeanDelays { access: moments.m1, queueing: pk_mean_delay(scenario.lambda, &moments)? })
}

/// Geometric retransmission at `q = 1/n`, evaluated at `p_large`.
///
/// The window variant uses `W_0 = 1`, `W_1 = 2n - 1`; it has the same access
/// delay and a strictly smaller queueing delay. Its queueing term is the
/// large-`n` form: it replaces `n (n - 1)` by `n^2`, a relative error of
/// order `1/n` against [`mean_delays`].
pub fn geometric_at_inverse_n(n: u32, lambda_hat: f64, p_large: f64, model: Model) -> MeanDelays {
    let n = n as f64;
    let fail = 1.0 - p_large;
    let access = 1.0 + n * fail / p_large;
    let load_term = lambda_hat * fail / (1.0 - lambda_hat / n);
    let denom = p_large - load_term;
    let queueing = if denom <= 0.0 {
        Delay::Infinite(Divergence::UnstableQueue)
    } else {
        let factor = match model {
            Model::Probability => 1.0,
            Model::Window => 1.0 - load_term / 3.0,
        };
        Delay::Finite(1.0 + n * (factor / denom - 1.0))
    };
    MeanDelays { access, queueing }
}

/// Exponential backoff at `q = 1 - 1/e`, evaluated at `p_large`.
///
/// Valid below the quasi-stability threshold; the window variant uses
/// `W_i = 2/(1 - 1/e)^i - 1` and scales the queueing term by `1 - 1/(3e)`.
pub fn exponential_at_robust_q(n: u32, lambda_hat: f64, p_large: f64, model: Model) -> Result<MeanDelays> {
    let e_inv = 1.0 / E;
    let q = 1.0 - e_inv;
    let excess = p_large - e_inv;
    if excess <= 0.0 {
        return Err(Error::DivergentMean { p: p_large, q });
    }
    let access = q / excess;
    let stable_denom = n as f64 * excess - lambda_hat * q;
    let second_denom = p_large - 2.0 * e_inv + e_inv * e_inv;
    let queueing = if stable_denom <= 0.0 {
        Delay::Infinite(Divergence::UnstableQueue)
    } else if second_denom <= 0.0 {
        Delay::Infinite(Divergence::DivergentSecondMoment)
    } else {
        let scale = match model {
            Model::Probability => 1.0,
            Model::Window => 1.0 - e_inv / 3.0,
        };
        Delay::Finite(access + scale * lambda_hat * (1.0 - p_large) * q / (stable_denom * second_denom))
    };
    Ok(MeanDelays { access, queueing })
}
