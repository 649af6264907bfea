//! Backoff policies and network scenarios.

use std::fmt;

use crate::error::{Error, Result};

/// Phase cap used wherever an unbounded cutoff needs a finite surrogate.
pub const DEFAULT_PHASE_CAP: u32 = 64;

/// How a backlogged HOL packet decides to retransmit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Model {
    /// Attempt with probability `q^i` in every slot of phase `i`.
    Probability,
    /// Draw a countdown uniformly from `{0, .., W_i - 1}` and transmit at zero.
    Window,
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Model::Probability => "prob",
            Model::Window => "window",
        })
    }
}

impl std::str::FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "prob" | "probability" => Ok(Model::Probability),
            "window" | "win" => Ok(Model::Window),
            other => Err(Error::InvalidConfig(format!("unknown model `{other}`"))),
        }
    }
}

/// Cutoff phase `K`. `Finite(1)` is geometric retransmission, `Unbounded` is
/// plain exponential backoff.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Cutoff {
    Finite(u32),
    Unbounded,
}

impl Cutoff {
    pub fn finite(self) -> Option<u32> {
        match self {
            Cutoff::Finite(k) => Some(k),
            Cutoff::Unbounded => None,
        }
    }

    /// The cutoff with `Unbounded` replaced by `cap`.
    pub fn capped(self, cap: u32) -> u32 {
        match self {
            Cutoff::Finite(k) => k,
            Cutoff::Unbounded => cap,
        }
    }
}

impl fmt::Display for Cutoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cutoff::Finite(k) => write!(f, "{k}"),
            Cutoff::Unbounded => f.write_str("inf"),
        }
    }
}

impl std::str::FromStr for Cutoff {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "inf" | "infinity" | "unbounded" | "∞" => Ok(Cutoff::Unbounded),
            _ => match s.parse::<u32>() {
                Ok(k) if k >= 1 => Ok(Cutoff::Finite(k)),
                _ => Err(Error::InvalidConfig(format!("cutoff must be a positive integer or `inf`, got `{s}`"))),
            },
        }
    }
}

/// A K-exponential backoff rule.
///
/// Window sizes default to `2/q^i - 1` (real valued, which gives a phase-i
/// request probability of exactly `q^i`) or, with `integer_windows`, to
/// `ceil(2/q^i) - 1`. Explicit `windows` override both.
#[derive(Debug, Clone, PartialEq)]
pub struct BackoffPolicy {
    pub model: Model,
    pub q: f64,
    pub cutoff: Cutoff,
    pub windows: Option<Vec<f64>>,
    pub integer_windows: bool,
}

impl BackoffPolicy {
    pub fn probability(q: f64, cutoff: Cutoff) -> Result<Self> {
        let policy = Self { model: Model::Probability, q, cutoff, windows: None, integer_windows: false };
        policy.validate()?;
        Ok(policy)
    }

    /// Window model with real-valued windows `2/q^i - 1`.
    pub fn window(q: f64, cutoff: Cutoff) -> Result<Self> {
        let policy = Self { model: Model::Window, q, cutoff, windows: None, integer_windows: false };
        policy.validate()?;
        Ok(policy)
    }

    /// Window model with integer windows `ceil(2/q^i) - 1`.
    pub fn window_integer(q: f64, cutoff: Cutoff) -> Result<Self> {
        let policy = Self { model: Model::Window, q, cutoff, windows: None, integer_windows: true };
        policy.validate()?;
        Ok(policy)
    }

    /// Window model with explicit sizes `W_0..W_K`; `K = windows.len() - 1`.
    /// `q` is kept for region lookups and reporting.
    pub fn window_explicit(q: f64, windows: Vec<f64>) -> Result<Self> {
        if windows.len() < 2 {
            return Err(Error::InvalidConfig("explicit windows need at least W_0 and W_1".into()));
        }
        let k = (windows.len() - 1) as u32;
        let integer_windows = windows.iter().all(|w| w.fract() == 0.0);
        let policy =
            Self { model: Model::Window, q, cutoff: Cutoff::Finite(k), windows: Some(windows), integer_windows };
        policy.validate()?;
        Ok(policy)
    }

    /// Same rule with a different model; explicit windows are dropped.
    pub fn with_model(&self, model: Model) -> Self {
        Self { model, windows: if model == Model::Window { self.windows.clone() } else { None }, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.q > 0.0 && self.q <= 1.0) {
            return Err(Error::InvalidConfig(format!("retransmission factor q must lie in (0, 1], got {}", self.q)));
        }
        if let Cutoff::Finite(0) = self.cutoff {
            return Err(Error::InvalidConfig("cutoff phase K must be at least 1".into()));
        }
        if let Some(ws) = &self.windows {
            if self.model != Model::Window {
                return Err(Error::InvalidConfig("explicit windows only apply to the window model".into()));
            }
            match self.cutoff {
                Cutoff::Finite(k) if ws.len() == k as usize + 1 => {}
                _ => return Err(Error::InvalidConfig("explicit windows must list W_0..W_K for a finite K".into())),
            }
            if ws.iter().any(|w| !(w.is_finite() && *w >= 1.0)) {
                return Err(Error::InvalidConfig("window sizes must be >= 1".into()));
            }
        }
        Ok(())
    }

    pub fn is_geometric(&self) -> bool {
        self.cutoff == Cutoff::Finite(1)
    }

    pub fn is_exponential(&self) -> bool {
        self.cutoff == Cutoff::Unbounded
    }

    /// `q^i`, the per-slot attempt probability of a phase-i HOL packet in the
    /// probability model.
    pub fn attempt_probability(&self, phase: u32) -> f64 {
        self.q.powi(phase as i32)
    }

    /// `W_i` under this policy's window rule.
    pub fn window_size(&self, phase: u32) -> f64 {
        if let Some(ws) = &self.windows {
            return ws[(phase as usize).min(ws.len() - 1)];
        }
        let raw = 2.0 / self.attempt_probability(phase);
        if self.integer_windows {
            integer_ceil(raw) - 1.0
        } else {
            raw - 1.0
        }
    }

    /// Integer window size for the simulator. Fails on non-integral windows.
    pub fn window_slots(&self, phase: u32) -> Result<u64> {
        let w = self.window_size(phase);
        if w.fract() != 0.0 || w > 9.0e15 {
            return Err(Error::InvalidConfig(format!(
                "window W_{phase} = {w} is not a representable integer; use integer windows for simulation"
            )));
        }
        Ok(w as u64)
    }

    /// True when the windows are the real-valued `2/q^i - 1` family.
    pub fn has_standard_windows(&self) -> bool {
        match &self.windows {
            None => !self.integer_windows,
            Some(ws) => ws.iter().enumerate().all(|(i, w)| {
                let standard = 2.0 / self.attempt_probability(i as u32) - 1.0;
                (w - standard).abs() <= 1e-12 * standard
            }),
        }
    }
}

/// `ceil` that ignores representation error just above an integer, so that
/// e.g. `2 / 0.02` maps to 100 rather than 101.
fn integer_ceil(x: f64) -> f64 {
    let nearest = x.round();
    if (x - nearest).abs() <= 1e-9 * x.abs().max(1.0) {
        nearest
    } else {
        x.ceil()
    }
}

/// A network instance: `n` buffered nodes with Bernoulli arrivals of rate
/// `lambda` each, sharing one collision channel under `policy`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub n: u32,
    pub lambda: f64,
    pub lambda_hat: f64,
    pub policy: BackoffPolicy,
}

impl Scenario {
    /// Builds a scenario from the aggregate rate `lambda_hat = n * lambda`.
    pub fn new(n: u32, lambda_hat: f64, policy: BackoffPolicy) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidConfig("node count must be at least 1".into()));
        }
        let lambda = lambda_hat / n as f64;
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::InvalidConfig(format!("per-node rate {lambda} must lie in (0, 1)")));
        }
        policy.validate()?;
        Ok(Self { n, lambda, lambda_hat, policy })
    }
}
