use crate::analytic::solve_success_probability;
use crate::error::{Error, Result};
use crate::policy::{Cutoff, Model, Scenario};

/// Largest window whose counter histogram is kept.
const MAX_TRACKED_WINDOW: u64 = 1 << 16;

/// Floating slack on the attempt-rate bound; the bound itself is exact.
const BOUND_SLACK: f64 = 1e-12;

/// Stationary residual-counter distribution of a window of size `w`:
/// `pi_k = 2 (w - k) / (w (w + 1))` for `k = 0..w`.
pub fn residual_distribution(w: u64) -> Vec<f64> {
    let wf = w as f64;
    (0..w).map(|k| 2.0 / (1.0 + wf) * (wf - k as f64) / wf).collect()
}

/// Expected number of transmissions in a slot given the state:
/// `(n - n_b) lambda + sum_{i >= 1} n_i r_i`, where `n_i` counts HOL packets
/// in phase `i`, `n_b = sum_{i >= 1} n_i` and `r_i` is the phase-i request
/// probability. Nodes that are idle or hold a fresh (phase-0) HOL packet
/// contribute through the `lambda` term.
pub fn attempt_rate(n: u32, lambda: f64, phase_counts: &[u32], request: &[f64]) -> f64 {
    let backlogged: u32 = phase_counts.iter().skip(1).sum();
    let retrying: f64 = phase_counts.iter().zip(request).skip(1).map(|(&c, &r)| c as f64 * r).sum();
    (n - backlogged) as f64 * lambda + retrying
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttemptRateReport {
    /// `-ln p_S` when the bound's precondition (finite `K`,
    /// `q <= -ln(p_S) / n`) holds.
    pub bound: Option<f64>,
    pub max: f64,
    pub mean: f64,
    pub slots: u64,
    /// Slots with `G_t >= q / (1 - q)`, the large-`n` floor of the attempt
    /// rate once the exponential-backoff backlog piles up.
    pub slots_above_saturation: u64,
    pub series: Option<Vec<f64>>,
}

pub(crate) struct AttemptRateMonitor {
    n: u32,
    lambda: f64,
    pub(crate) request: Vec<f64>,
    bound: Option<f64>,
    saturation: f64,
    max: f64,
    sum: f64,
    slots: u64,
    above_saturation: u64,
    series: Option<Vec<f64>>,
}

impl AttemptRateMonitor {
    pub(crate) fn new(scenario: &Scenario, request: Vec<f64>, keep_series: bool, horizon: u64) -> Self {
        let q = scenario.policy.q;
        let bound = match (scenario.policy.cutoff, solve_success_probability(scenario.lambda_hat)) {
            (Cutoff::Finite(_), Ok(fp)) if q <= fp.neg_ln_small() / scenario.n as f64 => Some(fp.neg_ln_small()),
            _ => None,
        };
        Self {
            n: scenario.n,
            lambda: scenario.lambda,
            request,
            bound,
            saturation: if q < 1.0 { q / (1.0 - q) } else { f64::INFINITY },
            max: 0.0,
            sum: 0.0,
            slots: 0,
            above_saturation: 0,
            series: keep_series.then(|| Vec::with_capacity(horizon.min(1 << 24) as usize)),
        }
    }

    pub(crate) fn observe(&mut self, slot: u64, phase_counts: &[u32]) -> Result<f64> {
        let g = attempt_rate(self.n, self.lambda, phase_counts, &self.request);
        if let Some(bound) = self.bound {
            if g > bound * (1.0 + BOUND_SLACK) {
                return Err(Error::InvariantViolation {
                    slot,
                    detail: format!("attempt rate {g} exceeds -ln p_S = {bound}; phase counts {phase_counts:?}"),
                });
            }
        }
        self.max = self.max.max(g);
        self.sum += g;
        self.slots += 1;
        if g >= self.saturation {
            self.above_saturation += 1;
        }
        if let Some(series) = &mut self.series {
            series.push(g);
        }
        Ok(g)
    }

    pub(crate) fn report(self) -> AttemptRateReport {
        AttemptRateReport {
            bound: self.bound,
            max: self.max,
            mean: if self.slots > 0 { self.sum / self.slots as f64 } else { 0.0 },
            slots: self.slots,
            slots_above_saturation: self.above_saturation,
            series: self.series,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    pub phase: u32,
    pub window: u64,
    /// Phase-slots observed (HOL packets in this phase, summed over slots).
    pub samples: u64,
    pub empirical: Vec<f64>,
    /// Total-variation distance to the stationary residual distribution.
    pub tv_distance: f64,
    /// Fraction of phase-slots with counter zero, i.e. with a request.
    pub request_fraction: f64,
}

pub(crate) struct ResidualMonitor {
    windows: Vec<u64>,
    histograms: Vec<Option<Vec<u64>>>,
}

impl ResidualMonitor {
    pub(crate) fn new(windows: &[u64]) -> Self {
        let histograms = windows.iter().map(|&w| (w <= MAX_TRACKED_WINDOW).then(|| vec![0; w as usize])).collect();
        Self { windows: windows.to_vec(), histograms }
    }

    pub(crate) fn record(&mut self, phase: u32, counter: u64) {
        if let Some(h) = &mut self.histograms[phase as usize] {
            h[counter as usize] += 1;
        }
    }

    pub(crate) fn report(self) -> Vec<ResidualReport> {
        self.histograms
            .into_iter()
            .zip(self.windows)
            .enumerate()
            .filter_map(|(phase, (h, window))| {
                let h = h?;
                let samples: u64 = h.iter().sum();
                if samples == 0 {
                    return None;
                }
                let empirical: Vec<f64> = h.iter().map(|&c| c as f64 / samples as f64).collect();
                let pi = residual_distribution(window);
                let tv = 0.5 * empirical.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum::<f64>();
                Some(ResidualReport {
                    phase: phase as u32,
                    window,
                    samples,
                    request_fraction: empirical[0],
                    empirical,
                    tv_distance: tv,
                })
            })
            .collect()
    }
}

/// Request probability per phase: `q^i` or `2 / (W_i + 1)`.
pub(crate) fn request_probabilities(scenario: &Scenario, phases: u32, windows: &[u64]) -> Vec<f64> {
    (0..=phases)
        .map(|i| match scenario.policy.model {
            Model::Probability => scenario.policy.attempt_probability(i),
            Model::Window => 2.0 / (windows[i as usize] as f64 + 1.0),
        })
        .collect()
}
