//! Stable and delay-stable regions of the retransmission factor `q`.
//!
//! A value of `q` is throughput-stable when the network can carry the whole
//! offered traffic `lambda_hat`, and delay-stable when, in addition, the mean
//! queueing delay is finite. Exponential backoff can be the former without
//! the latter (quasi-stable): the success probability drifts to the
//! undesired point `p_A`, or the second moment of the service time diverges.

use std::fmt;
use std::sync::OnceLock;

use crate::analytic::{
    closed_form_delay, mean_delays, service_moments, solve_success_probability, Delay, Divergence, FixedPoint,
    MeanDelays, MAX_STABLE_THROUGHPUT,
};
use crate::error::{Error, Result};
use crate::lambert::lambert_w0_from_ln;
use crate::policy::{BackoffPolicy, Cutoff, Scenario};

/// Relative slack when testing `q` against a region endpoint.
const ENDPOINT_SLACK: f64 = 1e-12;

/// Bisection tolerance for the quasi-stability threshold.
pub const LAMBDA0_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub lo_open: bool,
    pub hi_open: bool,
}

/// A (possibly empty) interval of retransmission factors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Region {
    Empty,
    Interval(Interval),
}

impl Region {
    fn new(lo: f64, hi: f64, lo_open: bool, hi_open: bool) -> Self {
        let degenerate_open = lo == hi && (lo_open || hi_open);
        if lo > hi || degenerate_open {
            Region::Empty
        } else {
            Region::Interval(Interval { lo, hi, lo_open, hi_open })
        }
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, Region::Empty)
    }

    pub fn interval(&self) -> Option<Interval> {
        match self {
            Region::Empty => None,
            Region::Interval(i) => Some(*i),
        }
    }

    /// Membership test. Closed endpoints accept values within a relative
    /// `1e-12` of the endpoint; open endpoints reject them.
    pub fn contains(&self, q: f64) -> bool {
        let Region::Interval(i) = self else {
            return false;
        };
        let near = |a: f64, b: f64| (a - b).abs() <= ENDPOINT_SLACK * a.abs().max(b.abs());
        let above_lo = if near(q, i.lo) { !i.lo_open } else { q > i.lo };
        let below_hi = if near(q, i.hi) { !i.hi_open } else { q < i.hi };
        above_lo && below_hi
    }

    /// True when `self` lies inside `other`.
    pub fn is_subset_of(&self, other: &Region) -> bool {
        match (self, other) {
            (Region::Empty, _) => true,
            (Region::Interval(_), Region::Empty) => false,
            (Region::Interval(a), Region::Interval(b)) => a.lo >= b.lo && a.hi <= b.hi,
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Region::Empty => f.write_str("empty"),
            Region::Interval(i) => write!(
                f,
                "{}{}, {}{}",
                if i.lo_open { '(' } else { '[' },
                i.lo,
                i.hi,
                if i.hi_open { ')' } else { ']' }
            ),
        }
    }
}

/// A region that is only known to contain the true delay-stable set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Envelope {
    pub region: Region,
    pub is_outer_bound: bool,
}

fn check_n(n: u32) -> Result<()> {
    if n < 2 {
        Err(Error::Domain(format!("region formulas need n >= 2, got {n}")))
    } else {
        Ok(())
    }
}

fn geo_bounds(n: u32, fp: &FixedPoint) -> (f64, f64) {
    let n = n as f64;
    let lh = fp.lambda_hat;
    let lo = lh * (1.0 - fp.p_large) / (fp.p_large * (n - lh));
    let hi = fp.neg_ln_small() / n;
    (lo, hi)
}

/// Throughput-stable region of geometric retransmission,
/// `[lambda_hat (1 - p_L) / (p_L (n - lambda_hat)), -ln p_S / n]`.
pub fn stable_region_geo(n: u32, lambda_hat: f64) -> Result<Region> {
    check_n(n)?;
    let fp = solve_success_probability(lambda_hat)?;
    let (lo, hi) = geo_bounds(n, &fp);
    Ok(Region::new(lo, hi, false, false))
}

/// As [`stable_region_geo`] with the lower end open: there the offered load
/// of each queue is exactly one.
pub fn delay_stable_region_geo(n: u32, lambda_hat: f64) -> Result<Region> {
    check_n(n)?;
    let fp = solve_success_probability(lambda_hat)?;
    let (lo, hi) = geo_bounds(n, &fp);
    Ok(Region::new(lo, hi, true, false))
}

/// Delay-minimising retransmission factor of geometric retransmission,
/// `-ln(p_S) / n`, the upper end of its stable region.
pub fn optimal_q_geo(n: u32, lambda_hat: f64) -> Result<f64> {
    check_n(n)?;
    let fp = solve_success_probability(lambda_hat)?;
    Ok(geo_bounds(n, &fp).1)
}

/// Minimum mean access and queueing delay of geometric retransmission,
/// reached at [`optimal_q_geo`]. Both grow linearly with `n`.
pub fn min_delay_geo(n: u32, lambda_hat: f64) -> Result<MeanDelays> {
    check_n(n)?;
    let fp = solve_success_probability(lambda_hat)?;
    let nf = n as f64;
    let neg_ln_s = fp.neg_ln_small();
    let pl = fp.p_large;
    let access = 1.0 + (1.0 - pl) / pl * nf / neg_ln_s;
    let denom = pl * neg_ln_s - lambda_hat * (1.0 - pl) / (1.0 - lambda_hat / nf);
    let queueing = if denom <= 0.0 {
        Delay::Infinite(Divergence::UnstableQueue)
    } else {
        Delay::Finite(1.0 + nf * (1.0 / denom - 1.0 / neg_ln_s))
    };
    Ok(MeanDelays { access, queueing })
}

/// Throughput-stable region of exponential backoff, `[1 - p_L, 1 - p_S]`.
/// It does not depend on `n` and is shared by both backoff models.
pub fn stable_region_exp(lambda_hat: f64) -> Result<Region> {
    let fp = solve_success_probability(lambda_hat)?;
    Ok(Region::new(1.0 - fp.p_large, 1.0 - fp.p_small, false, false))
}

fn exp_envelope_bounds(fp: &FixedPoint) -> (f64, f64) {
    let neg_ln_s = fp.neg_ln_small();
    ((1.0 - fp.p_large).sqrt(), neg_ln_s / (1.0 + neg_ln_s))
}

/// Outer bound `(sqrt(1 - p_L), -ln p_S / (1 - ln p_S))` on the delay-stable
/// region of exponential backoff with many nodes. Empty from [`lambda0`] on.
pub fn delay_stable_envelope_exp(lambda_hat: f64) -> Result<Envelope> {
    let fp = solve_success_probability(lambda_hat)?;
    let region = if lambda_hat >= lambda0() {
        Region::Empty
    } else {
        let (lo, hi) = exp_envelope_bounds(&fp);
        Region::new(lo, hi, true, true)
    };
    Ok(Envelope { region, is_outer_bound: true })
}

/// `sqrt(1 - p_L) - (-ln p_S) / (1 - ln p_S)`; zero at the threshold.
pub fn lambda0_residual(lambda_hat: f64) -> Result<f64> {
    let fp = solve_success_probability(lambda_hat)?;
    let (lo, hi) = exp_envelope_bounds(&fp);
    Ok(lo - hi)
}

/// Aggregate input rate above which exponential backoff has unbounded mean
/// queueing delay (about 0.3). Computed once per process.
pub fn lambda0() -> f64 {
    static LAMBDA0: OnceLock<f64> = OnceLock::new();
    *LAMBDA0.get_or_init(|| solve_lambda0(LAMBDA0_TOLERANCE * 1e-3))
}

fn solve_lambda0(tol: f64) -> f64 {
    // Negative near zero (0 - 1), positive at 1/e (0.795 - 0.5).
    let mut lo = 1e-6;
    let mut hi = MAX_STABLE_THROUGHPUT;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if lambda0_residual(mid).expect("mid lies in (0, 1/e)") < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// The undesired stable point of exponential backoff.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UndesiredPoint {
    /// Lambert-W form, evaluated in log space.
    pub exact: f64,
    /// Large-`n` form `n (1 - q) / (n + q ln(1 - q))`.
    pub approx: f64,
    /// `approx` for `n >= 10`, `exact` below.
    pub selected: f64,
    /// `n > -(1 + q) ln(1 - q)`, the node-count condition under which
    /// `sqrt(1 - p_A) > q`.
    pub node_condition: bool,
    /// `q < sqrt(1 - selected)`: the service time has an infinite second
    /// moment at this operating point.
    pub second_moment_diverges: bool,
}

pub fn undesired_point(n: u32, q: f64) -> Result<UndesiredPoint> {
    check_n(n)?;
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Domain(format!("undesired point needs 0 < q < 1, got {q}")));
    }
    let nf = n as f64;
    let a = nf * (1.0 - q) / q;
    let w = lambert_w0_from_ln(a.ln() + nf / q)?;
    let exact = a / w;
    let approx = nf * (1.0 - q) / (nf + q * (1.0 - q).ln());
    let selected = if n >= 10 { approx } else { exact };
    Ok(UndesiredPoint {
        exact,
        approx,
        selected,
        node_condition: nf > -(1.0 + q) * (1.0 - q).ln(),
        second_moment_diverges: q < (1.0 - selected).sqrt(),
    })
}

/// Maximum stable throughput of geometric retransmission at a fixed `q`,
/// `n q exp(-n q)`; equals `1/e` at `q = 1/n`.
pub fn max_stable_throughput_geo_at_q(n: u32, q: f64) -> f64 {
    let x = n as f64 * q;
    x * (-x).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConstrainedThroughput {
    /// Largest admissible aggregate rate. `capped` marks that the bound never
    /// binds below `1/e`.
    Value { lambda_hat: f64, capped: bool },
    /// Even vanishing traffic violates the bound.
    Empty,
}

impl ConstrainedThroughput {
    pub fn value(self) -> Option<f64> {
        match self {
            ConstrainedThroughput::Value { lambda_hat, .. } => Some(lambda_hat),
            ConstrainedThroughput::Empty => None,
        }
    }
}

/// Largest `lambda_hat <= 1/e` for which the probability-model service time
/// at `p_L` has second factorial moment below `bound`.
pub fn delay_constrained_max_throughput(k: u32, q: f64, bound: f64) -> Result<ConstrainedThroughput> {
    if !(q > 0.0 && q < 1.0) || bound.is_nan() || bound <= 0.0 {
        return Err(Error::Domain(format!("need 0 < q < 1 and bound > 0, got q={q}, bound={bound}")));
    }
    let policy = BackoffPolicy::probability(q, Cutoff::Finite(k))?;
    let m2_at = |lambda_hat: f64| -> Result<f64> {
        let fp = solve_success_probability(lambda_hat)?;
        let m = service_moments(&policy, fp.p_large)?;
        Ok(m.m2.finite().expect("finite cutoff has a finite second moment"))
    };
    let admissible = |lh: f64| -> Result<bool> { Ok(m2_at(lh)? < bound) };
    if admissible(MAX_STABLE_THROUGHPUT)? {
        return Ok(ConstrainedThroughput::Value { lambda_hat: MAX_STABLE_THROUGHPUT, capped: true });
    }
    let mut lo = 1e-12;
    if !admissible(lo)? {
        return Ok(ConstrainedThroughput::Empty);
    }
    let mut hi = MAX_STABLE_THROUGHPUT;
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if admissible(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(ConstrainedThroughput::Value { lambda_hat: lo, capped: false })
}

/// Grid resolution for locating the saturated equilibrium.
const SATURATION_GRID: usize = 100_000;

/// `p * m1(p)` for the probability model with cutoff `k`; always `>= 1`,
/// since every attempt takes a slot and `1/p` attempts are needed.
fn attempts_weighted_access(p: f64, q: f64, k: u32) -> f64 {
    let fail = 1.0 - p;
    let mut total = 0.0;
    let mut ratio = 1.0;
    for _ in 0..k {
        total += p * ratio;
        ratio *= fail / q;
    }
    total + ratio
}

/// Throughput of a saturated network (every node holding a packet) with
/// cutoff `k`, at its low-success equilibrium. Each node then attempts
/// `1 / (p m1(p))` times per slot, so the attempt rate `G` solves
/// `G = n / (p m1(p))` with `p = exp(-G)`; the smallest such `p` is the
/// equilibrium and the throughput is `G p`. Offered traffic above this value
/// cannot be carried once the network saturates, so it bounds the maximum
/// stable throughput of the cutoff. An unbounded cutoff returns `1/e`.
pub fn saturated_throughput(n: u32, q: f64, cutoff: Cutoff) -> Result<f64> {
    if n == 0 || !(q > 0.0 && q < 1.0) {
        return Err(Error::Domain(format!("need n >= 1 and 0 < q < 1, got n={n}, q={q}")));
    }
    let k = match cutoff {
        Cutoff::Finite(k) => k,
        Cutoff::Unbounded => return Ok(MAX_STABLE_THROUGHPUT),
    };
    let nf = n as f64;
    // Roots lie in (0, n] because p m1(p) >= 1; scan down from G = n.
    let h = |g: f64| g - nf / attempts_weighted_access((-g).exp(), q, k);
    let step = nf / SATURATION_GRID as f64;
    let mut hi = nf;
    let mut lo = hi;
    while lo > 0.0 {
        lo = (hi - step).max(0.0);
        if h(lo) <= 0.0 {
            break;
        }
        hi = lo;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if h(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let g = 0.5 * (lo + hi);
    Ok(g * (-g).exp())
}

/// Maximum stable throughput under the second-moment bound for each cutoff
/// in `cutoffs`: the smaller of the saturated throughput and the
/// delay-constrained rate (zero when the bound is never met).
pub fn constrained_throughput_by_cutoff(
    n: u32,
    q: f64,
    bound: f64,
    cutoffs: impl IntoIterator<Item = u32>,
) -> Result<Vec<(u32, f64)>> {
    cutoffs
        .into_iter()
        .map(|k| {
            let saturated = saturated_throughput(n, q, Cutoff::Finite(k))?;
            let delay = delay_constrained_max_throughput(k, q, bound)?.value().unwrap_or(0.0);
            Ok((k, saturated.min(delay)))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StabilityClass {
    StableFiniteDelay,
    QuasiStable,
    Unstable,
}

impl fmt::Display for StabilityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StabilityClass::StableFiniteDelay => "stable",
            StabilityClass::QuasiStable => "quasi-stable",
            StabilityClass::Unstable => "unstable",
        })
    }
}

/// Rule identifiers attached to a verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Reason {
    /// `lambda_hat > 1/e`.
    NoStablePoint,
    /// `q` lies outside the throughput-stable region.
    OutsideStableRegion,
    /// Geometric retransmission at the lower region end, offered load one.
    OfferedLoadOne,
    /// `1 - p_L <= q <= sqrt(1 - p_L)`: divergent second moment at `p_L`.
    SecondMomentZone,
    /// `-ln p_S / (1 - ln p_S) <= q <= 1 - p_S`: drift to the undesired point.
    UndesiredPointZone,
    /// `lambda_hat >= lambda0`.
    AboveQuasiThreshold,
    /// Queue unstable at `p_L` (offered load `>= 1`).
    QueueOverload,
    /// Exponential-backoff delay stability judged against an outer bound.
    OuterBoundOnly,
    /// `1 < K < inf`: no analytic stable region; only the exponential-backoff
    /// region and the offered load at `p_L` are checked.
    GeneralCutoff,
    /// One node never collides.
    SingleNode,
}

impl Reason {
    pub fn id(self) -> &'static str {
        match self {
            Reason::NoStablePoint => "no_stable_point",
            Reason::OutsideStableRegion => "outside_stable_region",
            Reason::OfferedLoadOne => "offered_load_one",
            Reason::SecondMomentZone => "second_moment_zone",
            Reason::UndesiredPointZone => "undesired_point_zone",
            Reason::AboveQuasiThreshold => "above_lambda0",
            Reason::QueueOverload => "queue_overload",
            Reason::OuterBoundOnly => "outer_bound_only",
            Reason::GeneralCutoff => "general_cutoff",
            Reason::SingleNode => "single_node",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityVerdict {
    pub class: StabilityClass,
    /// Operating success probability (`p_L` or `p_A`); `None` when unknown.
    pub p_operating: Option<f64>,
    pub reasons: Vec<Reason>,
}

impl StabilityVerdict {
    fn new(class: StabilityClass, p_operating: Option<f64>, reasons: Vec<Reason>) -> Self {
        Self { class, p_operating, reasons }
    }
}

/// Classifies a scenario as stable with finite delay, quasi-stable or
/// unstable.
pub fn classify(scenario: &Scenario) -> StabilityVerdict {
    use StabilityClass::*;
    let lambda_hat = scenario.lambda_hat;
    let q = scenario.policy.q;
    if scenario.n == 1 {
        return StabilityVerdict::new(StableFiniteDelay, Some(1.0), vec![Reason::SingleNode]);
    }
    let fp = match solve_success_probability(lambda_hat) {
        Ok(fp) => fp,
        Err(_) => return StabilityVerdict::new(Unstable, None, vec![Reason::NoStablePoint]),
    };
    let pl = fp.p_large;
    match scenario.policy.cutoff {
        Cutoff::Finite(1) => {
            let (lo, hi) = geo_bounds(scenario.n, &fp);
            let region = Region::new(lo, hi, false, false);
            if !region.contains(q) {
                return StabilityVerdict::new(Unstable, None, vec![Reason::OutsideStableRegion]);
            }
            let open_lo = Region::new(lo, hi, true, false);
            if !open_lo.contains(q) {
                return StabilityVerdict::new(QuasiStable, Some(pl), vec![Reason::OfferedLoadOne]);
            }
            match closed_form_delay(scenario, pl).map(|d| d.queueing) {
                Ok(Delay::Finite(_)) => StabilityVerdict::new(StableFiniteDelay, Some(pl), vec![]),
                _ => StabilityVerdict::new(QuasiStable, Some(pl), vec![Reason::QueueOverload]),
            }
        }
        Cutoff::Unbounded => {
            let region = Region::new(1.0 - pl, 1.0 - fp.p_small, false, false);
            if !region.contains(q) {
                return StabilityVerdict::new(Unstable, None, vec![Reason::OutsideStableRegion]);
            }
            let (sqrt_lo, undesired_lo) = exp_envelope_bounds(&fp);
            let mut reasons = Vec::new();
            if q >= undesired_lo {
                reasons.push(Reason::UndesiredPointZone);
            }
            if q <= sqrt_lo {
                reasons.push(Reason::SecondMomentZone);
            }
            if lambda_hat >= lambda0() {
                reasons.push(Reason::AboveQuasiThreshold);
            }
            if reasons.is_empty() {
                return StabilityVerdict::new(StableFiniteDelay, Some(pl), vec![Reason::OuterBoundOnly]);
            }
            let at_undesired =
                reasons.iter().any(|r| matches!(r, Reason::UndesiredPointZone | Reason::AboveQuasiThreshold));
            let p_operating =
                if at_undesired { undesired_point(scenario.n, q).ok().map(|u| u.selected) } else { Some(pl) };
            StabilityVerdict::new(QuasiStable, p_operating, reasons)
        }
        Cutoff::Finite(_) => {
            let region = Region::new(1.0 - pl, 1.0 - fp.p_small, false, false);
            if !region.contains(q) {
                return StabilityVerdict::new(Unstable, None, vec![Reason::OutsideStableRegion, Reason::GeneralCutoff]);
            }
            match mean_delays(scenario, pl).map(|d| d.queueing) {
                Ok(Delay::Finite(_)) => StabilityVerdict::new(StableFiniteDelay, Some(pl), vec![Reason::GeneralCutoff]),
                _ => StabilityVerdict::new(Unstable, None, vec![Reason::QueueOverload, Reason::GeneralCutoff]),
            }
        }
    }
}
