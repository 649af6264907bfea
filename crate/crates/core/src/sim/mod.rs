//! Slot-level simulation of `n` buffered nodes on a collision channel.
//!
//! Each slot runs, in order: Bernoulli arrivals (a packet reaching an idle
//! node becomes HOL at once and may transmit in the same slot), transmission
//! decisions, channel resolution (exactly one transmitter succeeds, two or
//! more collide and move one phase deeper, capped at `K`), and the implicit
//! countdown of window counters.
//!
//! Delays count the success slot: access delay is `departure - hol_start + 1`
//! and queueing delay `departure - arrival + 1`, so both are at least one.
//!
//! Per-node random streams are derived from `(seed, node)`, so a run is a
//! pure function of its configuration.

mod detector;
mod engine;
mod monitors;

pub use detector::{combine_verdicts, explosion_detected, quasi_stability_detector, DEFAULT_QUASI_FACTOR};
pub use engine::{run, run_observed, NodeState, SlotObserver, SlotOutcome, SlotView};
pub use monitors::{attempt_rate, residual_distribution, AttemptRateReport, ResidualReport};

use std::fmt;

use crate::error::{Error, Result};
use crate::policy::{Scenario, DEFAULT_PHASE_CAP};

/// Which per-slot monitors a run maintains. Any enabled monitor makes the
/// engine visit every slot instead of jumping between events.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Monitors {
    /// Attempt rate `G_t` with the `-ln p_S` bound check.
    pub attempt_rate: bool,
    /// Keep the per-slot `G_t` series (implies `attempt_rate`).
    pub attempt_rate_series: bool,
    /// Window-counter histograms per phase.
    pub residual: bool,
    /// Time-averaged HOL phase occupancy.
    pub phase_occupancy: bool,
}

impl Monitors {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn all() -> Self {
        Self { attempt_rate: true, attempt_rate_series: true, residual: true, phase_occupancy: true }
    }

    pub fn any(&self) -> bool {
        self.attempt_rate || self.attempt_rate_series || self.residual || self.phase_occupancy
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub scenario: Scenario,
    pub slots: u64,
    /// Leading slots excluded from every metric.
    pub warmup: u64,
    pub seed: u64,
    /// Finite surrogate for an unbounded cutoff.
    pub phase_cap: u32,
    pub monitors: Monitors,
    /// Number of equal windows the measured horizon is split into for the
    /// running queueing-delay and backlog series.
    pub series_windows: usize,
}

impl SimConfig {
    pub fn new(scenario: Scenario, slots: u64, warmup: u64, seed: u64) -> Self {
        Self {
            scenario,
            slots,
            warmup,
            seed,
            phase_cap: DEFAULT_PHASE_CAP,
            monitors: Monitors::none(),
            series_windows: 60,
        }
    }

    pub fn with_monitors(mut self, monitors: Monitors) -> Self {
        self.monitors = monitors;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.warmup >= self.slots {
            return Err(Error::InvalidConfig(format!("warmup {} must be below horizon {}", self.warmup, self.slots)));
        }
        if self.phase_cap == 0 {
            return Err(Error::InvalidConfig("phase cap must be at least 1".into()));
        }
        if self.series_windows == 0 || self.series_windows as u64 > self.slots - self.warmup {
            return Err(Error::InvalidConfig("series_windows must lie in 1..=measured slots".into()));
        }
        self.scenario.policy.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SimVerdict {
    Converged,
    /// Throughput keeps up but the windowed mean queueing delay keeps rising.
    QuasiStableDetected,
    /// The backlog grows steadily: departures fall short of arrivals.
    Exploded,
}

impl fmt::Display for SimVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SimVerdict::Converged => "converged",
            SimVerdict::QuasiStableDetected => "quasi-stable",
            SimVerdict::Exploded => "exploded",
        })
    }
}

/// Totals over the measured part of the horizon.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub arrivals: u64,
    pub departures: u64,
    pub attempts: u64,
    pub collisions: u64,
    pub access_delay_sum: u128,
    pub queueing_delay_sum: u128,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimMetrics {
    /// Successful departures per measured slot.
    pub throughput: f64,
    /// `None` when nothing departed during the measured horizon.
    pub mean_access_delay: Option<f64>,
    pub mean_queueing_delay: Option<f64>,
    /// Successful fraction of all transmission attempts.
    pub p_empirical: Option<f64>,
    pub counters: Counters,
    /// Packets still queued when the horizon ends (all of them, warmup
    /// included).
    pub backlog_end: u64,
    /// Mean queueing delay of the packets departing in each window; `None`
    /// for windows without departures.
    pub running_et_series: Vec<Option<f64>>,
    /// Total queued packets at the end of each window.
    pub backlog_series: Vec<u64>,
    pub attempt_rate: Option<AttemptRateReport>,
    pub residual: Option<Vec<ResidualReport>>,
    /// Fraction of HOL-slots spent in each phase.
    pub phase_occupancy: Option<Vec<f64>>,
    pub verdict: SimVerdict,
}
