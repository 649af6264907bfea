//! Experiment specifications, read from flat TOML files or built from CLI
//! flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use aloha_core::batch::replication_seed;
use aloha_core::stability::optimal_q_geo;
use aloha_core::{Cutoff, Model, DEFAULT_PHASE_CAP};
use serde::Deserialize;

use crate::error::{HarnessError, Result};

pub const DEFAULT_SLOTS: u64 = 2_000_000;
pub const DEFAULT_WARMUP: u64 = 100_000;
pub const DEFAULT_REPLICATIONS: usize = 5;
pub const DEFAULT_SEED: u64 = 1;

/// How the retransmission factor `q` is chosen at each grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QRule {
    Fixed(f64),
    /// `q = 1/n`.
    InverseN,
    /// `q = 1 - 1/e`.
    Robust,
    /// Delay-minimising factor of geometric retransmission, `-ln(p_S)/n`.
    OptimalGeo,
}

impl QRule {
    pub fn resolve(self, n: u32, lambda_hat: f64) -> Result<f64> {
        Ok(match self {
            QRule::Fixed(q) => q,
            QRule::InverseN => 1.0 / n as f64,
            QRule::Robust => 1.0 - (-1.0f64).exp(),
            QRule::OptimalGeo => optimal_q_geo(n, lambda_hat)?,
        })
    }
}

impl FromStr for QRule {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        let t: String = s.trim().to_ascii_lowercase().chars().filter(|c| !c.is_whitespace()).collect();
        match t.replace('\u{2212}', "-").as_str() {
            "1/n" => Ok(QRule::InverseN),
            "1-1/e" | "1-e^-1" | "robust" => Ok(QRule::Robust),
            "optimal_geo" | "optimal" => Ok(QRule::OptimalGeo),
            other => match other.parse::<f64>() {
                Ok(q) if q > 0.0 && q < 1.0 => Ok(QRule::Fixed(q)),
                _ => Err(HarnessError::Config(format!(
                    "q rule must be a number in (0, 1), `1/n`, `1-1/e` or `optimal_geo`, got `{s}`"
                ))),
            },
        }
    }
}

impl fmt::Display for QRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QRule::Fixed(q) => write!(f, "{q}"),
            QRule::InverseN => f.write_str("1/n"),
            QRule::Robust => f.write_str("1-1/e"),
            QRule::OptimalGeo => f.write_str("optimal_geo"),
        }
    }
}

/// A sweep over `model x K x n x lambda_hat`, all points sharing one q rule
/// and one set of replication seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub lambda_hats: Vec<f64>,
    pub cutoffs: Vec<Cutoff>,
    pub models: Vec<Model>,
    pub q_rule: QRule,
    pub ns: Vec<u32>,
    pub slots: u64,
    pub warmup: u64,
    /// One seed per replication.
    pub seeds: Vec<u64>,
    /// Phase cap standing in for an unbounded cutoff.
    pub phase_cap: u32,
    pub output: Option<PathBuf>,
}

impl ExperimentSpec {
    /// A single-point spec with default horizons.
    pub fn single(n: u32, lambda_hat: f64, cutoff: Cutoff, model: Model, q_rule: QRule) -> Self {
        Self {
            lambda_hats: vec![lambda_hat],
            cutoffs: vec![cutoff],
            models: vec![model],
            q_rule,
            ns: vec![n],
            slots: DEFAULT_SLOTS,
            warmup: DEFAULT_WARMUP,
            seeds: derived_seeds(DEFAULT_SEED, DEFAULT_REPLICATIONS),
            phase_cap: DEFAULT_PHASE_CAP,
            output: None,
        }
    }

    pub fn replications(&self) -> usize {
        self.seeds.len()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(HarnessError::Config(m));
        if self.lambda_hats.is_empty() || self.cutoffs.is_empty() || self.models.is_empty() || self.ns.is_empty() {
            return fail("lambda_hat, k, model and n lists must be non-empty".into());
        }
        if let Some(lh) = self.lambda_hats.iter().find(|lh| !(**lh > 0.0 && **lh < 1.0)) {
            return fail(format!("every lambda_hat must lie in (0, 1), got {lh}"));
        }
        if self.ns.contains(&0) {
            return fail("n must be positive".into());
        }
        if self.seeds.is_empty() {
            return fail("replications must be at least 1".into());
        }
        if self.warmup >= self.slots {
            return fail(format!("warmup {} must be below slots {}", self.warmup, self.slots));
        }
        if self.phase_cap == 0 {
            return fail("phase_cap must be at least 1".into());
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawSpec = toml::from_str(text)?;
        raw.into_spec()
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }
}

pub fn derived_seeds(base: u64, replications: usize) -> Vec<u64> {
    (0..replications).map(|r| replication_seed(base, r)).collect()
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T> OneOrMany<T> {
    fn into_vec(self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v],
            OneOrMany::Many(v) => v,
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum NumOrText {
    Int(i64),
    Float(f64),
    Text(String),
}

impl NumOrText {
    fn text(&self) -> String {
        match self {
            NumOrText::Int(v) => v.to_string(),
            NumOrText::Float(v) => v.to_string(),
            NumOrText::Text(s) => s.clone(),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    lambda_hat: OneOrMany<f64>,
    k: OneOrMany<NumOrText>,
    #[serde(default)]
    model: Option<OneOrMany<String>>,
    q: NumOrText,
    n: OneOrMany<u32>,
    slots: Option<u64>,
    warmup: Option<u64>,
    replications: Option<usize>,
    seed: Option<u64>,
    seeds: Option<Vec<u64>>,
    phase_cap: Option<u32>,
    output: Option<PathBuf>,
}

impl RawSpec {
    fn into_spec(self) -> Result<ExperimentSpec> {
        let cutoffs =
            self.k.into_vec().iter().map(|k| k.text().parse::<Cutoff>()).collect::<aloha_core::Result<Vec<_>>>()?;
        let models = match self.model {
            Some(m) => m.into_vec().iter().map(|m| m.parse::<Model>()).collect::<aloha_core::Result<Vec<_>>>()?,
            None => vec![Model::Probability],
        };
        let seeds = match (self.seeds, self.replications) {
            (Some(s), Some(r)) if s.len() != r => {
                return Err(HarnessError::Config(format!("{} seeds listed for {r} replications", s.len())));
            }
            (Some(s), _) => s,
            (None, r) => derived_seeds(self.seed.unwrap_or(DEFAULT_SEED), r.unwrap_or(DEFAULT_REPLICATIONS)),
        };
        let spec = ExperimentSpec {
            lambda_hats: self.lambda_hat.into_vec(),
            cutoffs,
            models,
            q_rule: self.q.text().parse()?,
            ns: self.n.into_vec(),
            slots: self.slots.unwrap_or(DEFAULT_SLOTS),
            warmup: self.warmup.unwrap_or(DEFAULT_WARMUP),
            seeds,
            phase_cap: self.phase_cap.unwrap_or(DEFAULT_PHASE_CAP),
            output: self.output,
        };
        spec.validate()?;
        Ok(spec)
    }
}
