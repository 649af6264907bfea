//! Real branches of the Lambert W function.
//!
//! `W0` is the principal branch (`w >= -1`) defined on `[-1/e, inf)`, `Wm1` the
//! lower branch (`w <= -1`) defined on `[-1/e, 0)`. Both are computed with
//! Halley's iteration from a branch-specific seed, falling back to bisection
//! on a guaranteed bracket if the iteration misbehaves near the branch point.

use std::f64::consts::E;

use crate::error::{Error, Result};

/// `-1/e`, the common endpoint of both real branches.
pub const BRANCH_POINT: f64 = -1.0 / E;

const MAX_HALLEY_STEPS: usize = 64;
const MAX_BISECTION_STEPS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    /// Principal branch, `W(x) >= -1`.
    W0,
    /// Lower branch, `W(x) <= -1`.
    Wm1,
}

/// Evaluates `W(x)` on the requested branch.
pub fn lambert_w(branch: Branch, x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("lambert_w: non-finite argument {x}")));
    }
    // Arguments that round onto the branch point from either side.
    if (x - BRANCH_POINT).abs() <= 4.0 * f64::EPSILON * BRANCH_POINT.abs() {
        return Ok(-1.0);
    }
    if x < BRANCH_POINT {
        return Err(Error::Domain(format!("lambert_w: {x} < -1/e")));
    }
    match branch {
        Branch::W0 => {
            if x == 0.0 {
                return Ok(0.0);
            }
            let seed = seed_w0(x);
            Ok(refine(x, seed, branch))
        }
        Branch::Wm1 => {
            if x >= 0.0 {
                return Err(Error::Domain(format!("lambert_w: lower branch needs -1/e <= x < 0, got {x}")));
            }
            let seed = seed_wm1(x);
            Ok(refine(x, seed, branch))
        }
    }
}

/// Principal branch evaluated from `ln x`, for arguments too large to form.
///
/// Solves `w + ln w = ln_x` by Newton's method. Only meaningful for `x > 0`.
pub fn lambert_w0_from_ln(ln_x: f64) -> Result<f64> {
    if !ln_x.is_finite() {
        return Err(Error::Domain(format!("lambert_w0_from_ln: non-finite {ln_x}")));
    }
    if ln_x < 1.0 {
        return lambert_w(Branch::W0, ln_x.exp());
    }
    // ln x >= 1 means x >= e and w >= 1.
    let mut w = ln_x - ln_x.ln().max(0.0);
    if w < 1.0 {
        w = 1.0;
    }
    for _ in 0..MAX_HALLEY_STEPS {
        let f = w + w.ln() - ln_x;
        let step = f / (1.0 + 1.0 / w);
        w -= step;
        if step.abs() <= 4.0 * f64::EPSILON * w.abs() {
            break;
        }
    }
    Ok(w)
}

fn seed_w0(x: f64) -> f64 {
    if x < -0.25 {
        let p = (2.0 * (E * x + 1.0)).max(0.0).sqrt();
        -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    } else if x.abs() <= 0.25 {
        x - x * x + 1.5 * x * x * x
    } else if x < E {
        x.ln_1p() * 0.75
    } else {
        let l1 = x.ln();
        let l2 = l1.ln();
        l1 - l2 + l2 / l1
    }
}

fn seed_wm1(x: f64) -> f64 {
    if x < -0.25 {
        let p = (2.0 * (E * x + 1.0)).max(0.0).sqrt();
        -1.0 - p - p * p / 3.0 - 11.0 / 72.0 * p * p * p
    } else {
        let l1 = (-x).ln();
        let l2 = (-l1).ln();
        l1 - l2 + l2 / l1
    }
}

fn on_branch(branch: Branch, w: f64) -> bool {
    w.is_finite()
        && match branch {
            Branch::W0 => w >= -1.0,
            Branch::Wm1 => w <= -1.0,
        }
}

fn refine(x: f64, seed: f64, branch: Branch) -> f64 {
    let mut w = seed;
    let mut converged = false;
    for _ in 0..MAX_HALLEY_STEPS {
        let ew = w.exp();
        let f = w * ew - x;
        let wp1 = w + 1.0;
        if wp1 == 0.0 {
            break;
        }
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        if denom == 0.0 || !denom.is_finite() {
            break;
        }
        let next = w - f / denom;
        if !on_branch(branch, next) {
            break;
        }
        let delta = (next - w).abs();
        w = next;
        if delta <= 2.0 * f64::EPSILON * w.abs().max(1e-300) {
            converged = true;
            break;
        }
    }
    if converged || (on_branch(branch, w) && residual(w, x) <= 1e-15 * x.abs().max(1e-300)) {
        w
    } else {
        bisect(x, branch)
    }
}

fn residual(w: f64, x: f64) -> f64 {
    (w * w.exp() - x).abs()
}

/// `w e^w` is increasing on `[-1, inf)` and decreasing on `(-inf, -1]`.
fn bisect(x: f64, branch: Branch) -> f64 {
    let (mut lo, mut hi) = match branch {
        Branch::W0 => (-1.0, if x > E { x.ln() } else { 1.0 }),
        Branch::Wm1 => (2.0 * (-x).ln() - 2.0, -1.0),
    };
    for _ in 0..MAX_BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        let above = mid * mid.exp() > x;
        match (branch, above) {
            (Branch::W0, true) | (Branch::Wm1, false) => hi = mid,
            (Branch::W0, false) | (Branch::Wm1, true) => lo = mid,
        }
    }
    0.5 * (lo + hi)
}
