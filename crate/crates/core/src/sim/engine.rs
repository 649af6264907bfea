use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};

use super::detector::{explosion_detected, quasi_stability_detector, DEFAULT_QUASI_FACTOR};
use super::monitors::{attempt_rate, request_probabilities, AttemptRateMonitor, ResidualMonitor};
use super::{Counters, SimConfig, SimMetrics, SimVerdict};
use crate::error::{Error, Result};
use crate::policy::Model;

const NO_EVENT: u64 = u64::MAX;

/// One node: its FIFO of arrival slots (front is the HOL packet) plus the
/// HOL packet's backoff state.
#[derive(Debug, Clone)]
pub struct NodeState {
    queue: VecDeque<u64>,
    phase: u32,
    hol_since: u64,
    /// Slot of the HOL packet's next transmission; `NO_EVENT` without one.
    next_tx: u64,
    next_arrival: u64,
    rng: ChaCha8Rng,
}

impl NodeState {
    fn new(seed: u64, id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id);
        Self { queue: VecDeque::new(), phase: 0, hol_since: 0, next_tx: NO_EVENT, next_arrival: 0, rng }
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn hol_phase(&self) -> Option<u32> {
        (!self.queue.is_empty()).then_some(self.phase)
    }

    pub fn hol_since(&self) -> Option<u64> {
        (!self.queue.is_empty()).then_some(self.hol_since)
    }

    /// Slots left before the HOL packet transmits, as seen at `slot`. For the
    /// window model this is the residual countdown `J_t`.
    pub fn counter(&self, slot: u64) -> Option<u64> {
        (!self.queue.is_empty() && self.next_tx != NO_EVENT).then(|| self.next_tx - slot)
    }

    /// True when the HOL packet transmits at `slot`.
    pub fn transmits_at(&self, slot: u64) -> bool {
        !self.queue.is_empty() && self.next_tx == slot
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotOutcome {
    Idle,
    Success { node: usize, access_delay: u64, queueing_delay: u64 },
    Collision,
}

/// State of the network in one slot, after arrivals and before the channel
/// is resolved.
pub struct SlotView<'a> {
    pub slot: u64,
    pub nodes: &'a [NodeState],
    pub transmitters: &'a [usize],
    pub outcome: SlotOutcome,
    /// HOL packets in phases `>= 1`.
    pub backlogged: u32,
    /// Expected transmissions in this slot given the state.
    pub attempt_rate: f64,
}

pub trait SlotObserver {
    fn observe(&mut self, view: &SlotView<'_>) -> Result<()>;
}

/// Below this success probability the library sampler is bypassed: its
/// setup squares `1 - p` until it drops under one half, which never happens
/// once `1 - p` rounds to one.
const INVERSION_THRESHOLD: f64 = 1e-9;

/// Failures before the first success of a Bernoulli(`p`) sequence.
enum Skip {
    Library(Geometric),
    /// Inversion with `ln(1 - p)` kept accurate for tiny `p`.
    Inversion {
        ln_fail: f64,
    },
}

impl Skip {
    fn new(p: f64) -> Result<Self> {
        if p > 0.0 && p < INVERSION_THRESHOLD {
            return Ok(Skip::Inversion { ln_fail: (-p).ln_1p() });
        }
        Geometric::new(p).map(Skip::Library).map_err(|e| Error::InvalidConfig(format!("probability {p}: {e}")))
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> u64 {
        match self {
            Skip::Library(g) => g.sample(rng),
            Skip::Inversion { ln_fail } => {
                let u = 1.0 - rng.random::<f64>();
                // Saturates at u64::MAX, which is past any horizon.
                (u.ln() / ln_fail).floor() as u64
            }
        }
    }
}

enum Backoff {
    /// Per-phase geometric number of idle slots before an attempt.
    Probability(Vec<Skip>),
    /// Per-phase integer window.
    Window(Vec<u64>),
}

impl Backoff {
    fn delay(&self, phase: u32, rng: &mut ChaCha8Rng) -> u64 {
        match self {
            Backoff::Probability(dists) => dists[phase as usize].sample(rng),
            Backoff::Window(ws) => rng.random_range(0..ws[phase as usize]),
        }
    }
}

struct SeriesAccumulator {
    start: u64,
    len: u64,
    windows: usize,
    sums: Vec<u128>,
    counts: Vec<u64>,
    backlog: Vec<u64>,
}

impl SeriesAccumulator {
    fn new(warmup: u64, slots: u64, windows: usize) -> Self {
        Self {
            start: warmup,
            len: (slots - warmup) / windows as u64,
            windows,
            sums: vec![0; windows],
            counts: vec![0; windows],
            backlog: Vec::with_capacity(windows),
        }
    }

    fn index(&self, slot: u64) -> usize {
        (((slot - self.start) / self.len) as usize).min(self.windows - 1)
    }

    fn window_end(&self, w: usize) -> u64 {
        self.start + (w as u64 + 1) * self.len - 1
    }

    /// Records the backlog for every window that ended before `slot`.
    fn close_windows_before(&mut self, slot: u64, backlog: u64) {
        while self.backlog.len() < self.windows - 1 && self.window_end(self.backlog.len()) < slot {
            self.backlog.push(backlog);
        }
    }

    fn finish(mut self, backlog: u64) -> (Vec<Option<f64>>, Vec<u64>) {
        while self.backlog.len() < self.windows {
            self.backlog.push(backlog);
        }
        let series = self.sums.iter().zip(&self.counts).map(|(&s, &c)| (c > 0).then(|| s as f64 / c as f64)).collect();
        (series, self.backlog)
    }
}

/// Runs one simulation.
pub fn run(config: &SimConfig) -> Result<SimMetrics> {
    Engine::new(config)?.execute(None)
}

/// Runs one simulation, calling `observer` in every slot.
pub fn run_observed(config: &SimConfig, observer: &mut dyn SlotObserver) -> Result<SimMetrics> {
    Engine::new(config)?.execute(Some(observer))
}

struct Engine<'c> {
    config: &'c SimConfig,
    nodes: Vec<NodeState>,
    /// Earliest pending event (arrival or transmission) of each node.
    events: Vec<u64>,
    phases: u32,
    backoff: Backoff,
    arrivals: Skip,
    phase_counts: Vec<u32>,
    request: Vec<f64>,
    total_arrivals: u64,
    total_departures: u64,
}

impl<'c> Engine<'c> {
    fn new(config: &'c SimConfig) -> Result<Self> {
        config.validate()?;
        let scenario = &config.scenario;
        let policy = &scenario.policy;
        let phases = policy.cutoff.capped(config.phase_cap);
        let (backoff, windows) = match policy.model {
            Model::Probability => {
                let dists =
                    (0..=phases).map(|i| Skip::new(policy.attempt_probability(i))).collect::<Result<Vec<_>>>()?;
                (Backoff::Probability(dists), Vec::new())
            }
            Model::Window => {
                let ws = (0..=phases).map(|i| policy.window_slots(i)).collect::<Result<Vec<_>>>()?;
                (Backoff::Window(ws.clone()), ws)
            }
        };
        let arrivals = Skip::new(scenario.lambda)?;
        let mut nodes: Vec<NodeState> = (0..scenario.n).map(|i| NodeState::new(config.seed, i as u64)).collect();
        for node in &mut nodes {
            node.next_arrival = arrivals.sample(&mut node.rng);
        }
        let request = request_probabilities(scenario, phases, &windows);
        let events = nodes.iter().map(|n| n.next_arrival).collect();
        Ok(Self {
            config,
            nodes,
            events,
            phases,
            backoff,
            arrivals,
            phase_counts: vec![0; phases as usize + 1],
            request,
            total_arrivals: 0,
            total_departures: 0,
        })
    }

    fn window_sizes(&self) -> Vec<u64> {
        match &self.backoff {
            Backoff::Window(ws) => ws.clone(),
            Backoff::Probability(_) => Vec::new(),
        }
    }

    fn execute(mut self, mut observer: Option<&mut dyn SlotObserver>) -> Result<SimMetrics> {
        let cfg = self.config;
        let monitors = cfg.monitors;
        let dense = monitors.any() || observer.is_some();
        let warmup = cfg.warmup;
        let mut counters = Counters::default();
        let mut series = SeriesAccumulator::new(warmup, cfg.slots, cfg.series_windows);
        let mut rate_monitor = (monitors.attempt_rate || monitors.attempt_rate_series).then(|| {
            AttemptRateMonitor::new(&cfg.scenario, self.request.clone(), monitors.attempt_rate_series, cfg.slots)
        });
        let mut residual = (monitors.residual && cfg.scenario.policy.model == Model::Window)
            .then(|| ResidualMonitor::new(&self.window_sizes()));
        let mut occupancy = monitors.phase_occupancy.then(|| vec![0u64; self.phases as usize + 1]);
        let mut transmitters: Vec<usize> = Vec::with_capacity(self.nodes.len());

        let mut t = self.events.iter().copied().min().unwrap_or(NO_EVENT);
        if dense {
            t = 0;
        }
        while t < cfg.slots {
            series.close_windows_before(t, self.total_arrivals - self.total_departures);
            let measured = t >= warmup;
            transmitters.clear();
            for i in 0..self.nodes.len() {
                if self.events[i] != t {
                    continue;
                }
                if self.nodes[i].next_arrival == t {
                    self.arrive(i, t);
                    if measured {
                        counters.arrivals += 1;
                    }
                }
                if self.nodes[i].next_tx == t {
                    transmitters.push(i);
                }
            }

            let outcome = match transmitters.len() {
                0 => SlotOutcome::Idle,
                1 => {
                    let node = &self.nodes[transmitters[0]];
                    let arrival = *node.queue.front().expect("transmitter has a HOL packet");
                    SlotOutcome::Success {
                        node: transmitters[0],
                        access_delay: t - node.hol_since + 1,
                        queueing_delay: t - arrival + 1,
                    }
                }
                _ => SlotOutcome::Collision,
            };

            if dense {
                let g = match &mut rate_monitor {
                    Some(m) => m.observe(t, &self.phase_counts)?,
                    None => attempt_rate(cfg.scenario.n, cfg.scenario.lambda, &self.phase_counts, &self.request),
                };
                if measured {
                    if let Some(occ) = &mut occupancy {
                        for (o, &c) in occ.iter_mut().zip(&self.phase_counts) {
                            *o += c as u64;
                        }
                    }
                    if let Some(res) = &mut residual {
                        for node in &self.nodes {
                            if let Some(c) = node.counter(t) {
                                res.record(node.phase, c);
                            }
                        }
                    }
                }
                if let Some(obs) = observer.as_deref_mut() {
                    let backlogged = self.phase_counts.iter().skip(1).sum();
                    obs.observe(&SlotView {
                        slot: t,
                        nodes: &self.nodes,
                        transmitters: &transmitters,
                        outcome,
                        backlogged,
                        attempt_rate: g,
                    })?;
                }
            }

            if measured {
                counters.attempts += transmitters.len() as u64;
            }
            match outcome {
                SlotOutcome::Idle => {}
                SlotOutcome::Success { node, access_delay, queueing_delay } => {
                    self.depart(node, t);
                    if measured {
                        counters.departures += 1;
                        counters.access_delay_sum += access_delay as u128;
                        counters.queueing_delay_sum += queueing_delay as u128;
                        let w = series.index(t);
                        series.sums[w] += queueing_delay as u128;
                        series.counts[w] += 1;
                    }
                }
                SlotOutcome::Collision => {
                    for &i in &transmitters {
                        self.collide(i, t);
                    }
                    if measured {
                        counters.collisions += 1;
                    }
                }
            }
            debug_assert_eq!(
                self.total_arrivals,
                self.total_departures + self.nodes.iter().map(|n| n.queue.len() as u64).sum::<u64>()
            );
            t = if dense { t + 1 } else { self.events.iter().copied().min().unwrap_or(NO_EVENT).max(t + 1) };
        }

        let backlog_end = self.total_arrivals - self.total_departures;
        let queued: u64 = self.nodes.iter().map(|n| n.queue.len() as u64).sum();
        if queued != backlog_end {
            return Err(Error::InvariantViolation {
                slot: cfg.slots,
                detail: format!(
                    "packet conservation: {} arrivals, {} departures, {queued} queued",
                    self.total_arrivals, self.total_departures
                ),
            });
        }
        let (running_et_series, backlog_series) = series.finish(backlog_end);
        let measured_slots = cfg.slots - warmup;
        let backlog_as_series: Vec<Option<f64>> = backlog_series.iter().map(|&b| Some(b as f64)).collect();
        let verdict = if explosion_detected(&backlog_series, &counters) {
            SimVerdict::Exploded
        } else if quasi_stability_detector(&running_et_series, DEFAULT_QUASI_FACTOR) != SimVerdict::Converged
            || quasi_stability_detector(&backlog_as_series, DEFAULT_QUASI_FACTOR) != SimVerdict::Converged
        {
            SimVerdict::QuasiStableDetected
        } else {
            SimVerdict::Converged
        };
        let phase_occupancy = occupancy.map(|occ| {
            let total: u64 = occ.iter().sum();
            occ.iter().map(|&c| if total > 0 { c as f64 / total as f64 } else { 0.0 }).collect()
        });
        let per_departure = |sum: u128| (counters.departures > 0).then(|| sum as f64 / counters.departures as f64);
        Ok(SimMetrics {
            throughput: counters.departures as f64 / measured_slots as f64,
            mean_access_delay: per_departure(counters.access_delay_sum),
            mean_queueing_delay: per_departure(counters.queueing_delay_sum),
            p_empirical: (counters.attempts > 0).then(|| counters.departures as f64 / counters.attempts as f64),
            counters,
            backlog_end,
            running_et_series,
            backlog_series,
            attempt_rate: rate_monitor.map(AttemptRateMonitor::report),
            residual: residual.map(ResidualMonitor::report),
            phase_occupancy,
            verdict,
        })
    }

    fn start_hol(&mut self, i: usize, slot: u64) {
        let node = &mut self.nodes[i];
        node.phase = 0;
        node.hol_since = slot;
        node.next_tx = slot + self.backoff.delay(0, &mut node.rng);
        self.phase_counts[0] += 1;
        self.events[i] = node.next_arrival.min(node.next_tx);
    }

    fn arrive(&mut self, i: usize, t: u64) {
        self.total_arrivals += 1;
        let node = &mut self.nodes[i];
        node.queue.push_back(t);
        node.next_arrival = (t + 1).saturating_add(self.arrivals.sample(&mut node.rng));
        if node.queue.len() == 1 {
            self.start_hol(i, t);
        } else {
            self.events[i] = node.next_arrival.min(node.next_tx);
        }
    }

    fn depart(&mut self, i: usize, t: u64) {
        self.total_departures += 1;
        let node = &mut self.nodes[i];
        node.queue.pop_front();
        self.phase_counts[node.phase as usize] -= 1;
        node.next_tx = NO_EVENT;
        self.events[i] = node.next_arrival;
        if !node.queue.is_empty() {
            self.start_hol(i, t + 1);
        }
    }

    fn collide(&mut self, i: usize, t: u64) {
        let node = &mut self.nodes[i];
        self.phase_counts[node.phase as usize] -= 1;
        node.phase = (node.phase + 1).min(self.phases);
        self.phase_counts[node.phase as usize] += 1;
        node.next_tx = (t + 1).saturating_add(self.backoff.delay(node.phase, &mut node.rng));
        self.events[i] = node.next_arrival.min(node.next_tx);
    }
}
