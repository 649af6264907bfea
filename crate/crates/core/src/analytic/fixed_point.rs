//! Roots of the success-probability fixed point `p = exp(-lambda_hat / p)`.

use std::f64::consts::E;

use crate::error::{Error, Result};
use crate::lambert::{lambert_w, Branch};

/// `1/e`, the largest aggregate input rate with a real fixed point.
pub const MAX_STABLE_THROUGHPUT: f64 = 1.0 / E;

/// The two roots of `p ln p = -lambda_hat`, with `p_small <= 1/e <= p_large`.
///
/// `p_large` is the desired stable point a well-tuned network settles at; the
/// small root bounds the stable region from the other side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPoint {
    pub lambda_hat: f64,
    pub p_large: f64,
    pub p_small: f64,
}

impl FixedPoint {
    /// `|p - exp(-lambda_hat / p)|` for the given root.
    pub fn residual(&self, p: f64) -> f64 {
        (p - (-self.lambda_hat / p).exp()).abs()
    }

    /// `-ln p_small`, the attempt rate at which the small root is reached.
    pub fn neg_ln_small(&self) -> f64 {
        -self.p_small.ln()
    }
}

pub fn solve_success_probability(lambda_hat: f64) -> Result<FixedPoint> {
    if lambda_hat.is_nan() || lambda_hat <= 0.0 || lambda_hat.is_infinite() {
        return Err(Error::Domain(format!("aggregate input rate must be positive, got {lambda_hat}")));
    }
    // Values that only exceed 1/e by representation error are the double root.
    if lambda_hat > MAX_STABLE_THROUGHPUT * (1.0 + 4.0 * f64::EPSILON) {
        return Err(Error::NoStablePoint { lambda_hat });
    }
    let x = (-lambda_hat).max(-MAX_STABLE_THROUGHPUT);
    let w0 = lambert_w(Branch::W0, x)?;
    let wm1 = lambert_w(Branch::Wm1, x)?;
    Ok(FixedPoint { lambda_hat, p_large: w0.exp(), p_small: wm1.exp() })
}
