//! CSV rows. Numeric cells are written in shortest round-trip form, so
//! every row reads back bit for bit; unbounded and missing values use the
//! `INF` and `NA` sentinels.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use aloha_core::{Cutoff, Model};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{HarnessError, Result};

/// A numeric CSV cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Value(f64),
    /// The quantity is unbounded.
    Inf,
    /// The quantity is undefined or was not measured.
    Na,
}

impl Cell {
    pub fn from_option(v: Option<f64>) -> Self {
        v.map_or(Cell::Na, Cell::from)
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Cell::Value(v) => Some(v),
            _ => None,
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        if v.is_nan() {
            Cell::Na
        } else if v.is_infinite() {
            Cell::Inf
        } else {
            Cell::Value(v)
        }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Value(v) => write!(f, "{v:?}"),
            Cell::Inf => f.write_str("INF"),
            Cell::Na => f.write_str("NA"),
        }
    }
}

impl FromStr for Cell {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "INF" => Ok(Cell::Inf),
            "NA" => Ok(Cell::Na),
            _ => s
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(Cell::Value)
                .ok_or_else(|| HarnessError::Config(format!("bad numeric cell `{s}`"))),
        }
    }
}

mod as_text {
    use super::*;

    pub fn serialize<T: fmt::Display, S: Serializer>(v: &T, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(v)
    }

    pub fn deserialize<'de, T, D>(d: D) -> std::result::Result<T, D::Error>
    where
        T: FromStr,
        T::Err: fmt::Display,
        D: Deserializer<'de>,
    {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

mod cell_text {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Cell, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(v)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Cell, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One grid point: analytic prediction next to the simulated estimate.
///
/// `verdict` is the simulator's combined verdict (`converged`,
/// `quasi-stable`, `exploded`), or the analytic class (`stable`,
/// `quasi-stable`, `unstable`) for analysis-only rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    #[serde(with = "cell_text")]
    pub lambda_hat: Cell,
    pub n: u32,
    #[serde(rename = "K", with = "as_text")]
    pub k: Cutoff,
    #[serde(with = "as_text")]
    pub model: Model,
    #[serde(with = "cell_text")]
    pub q: Cell,
    #[serde(rename = "EX_analytic", with = "cell_text")]
    pub ex_analytic: Cell,
    #[serde(rename = "ET_analytic", with = "cell_text")]
    pub et_analytic: Cell,
    #[serde(rename = "EX_sim", with = "cell_text")]
    pub ex_sim: Cell,
    #[serde(rename = "ET_sim", with = "cell_text")]
    pub et_sim: Cell,
    #[serde(rename = "ET_sim_stderr", with = "cell_text")]
    pub et_sim_stderr: Cell,
    #[serde(rename = "p_L", with = "cell_text")]
    pub p_l: Cell,
    #[serde(with = "cell_text")]
    pub p_empirical: Cell,
    pub verdict: String,
}

/// Where the analysis is expected to part from simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Divergence {
    None,
    /// Exponential-type backoff within 0.05 of the quasi-stability threshold.
    NearLambda0,
    /// The analytic queueing delay is unbounded.
    PredictedInfinite,
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Divergence::None => "none",
            Divergence::NearLambda0 => "near-lambda0",
            Divergence::PredictedInfinite => "predicted-infinite",
        })
    }
}

impl FromStr for Divergence {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Divergence::None),
            "near-lambda0" => Ok(Divergence::NearLambda0),
            "predicted-infinite" => Ok(Divergence::PredictedInfinite),
            _ => Err(HarnessError::Config(format!("unknown divergence tag `{s}`"))),
        }
    }
}

/// A [`ResultRow`] with relative gaps `(sim - analytic) / analytic`.
/// `cap_gap` is the relative change of the simulated `E[T]` when the phase
/// cap of an unbounded cutoff is halved; `NA` for finite cutoffs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    #[serde(with = "cell_text")]
    pub lambda_hat: Cell,
    pub n: u32,
    #[serde(rename = "K", with = "as_text")]
    pub k: Cutoff,
    #[serde(with = "as_text")]
    pub model: Model,
    #[serde(with = "cell_text")]
    pub q: Cell,
    #[serde(rename = "EX_analytic", with = "cell_text")]
    pub ex_analytic: Cell,
    #[serde(rename = "ET_analytic", with = "cell_text")]
    pub et_analytic: Cell,
    #[serde(rename = "EX_sim", with = "cell_text")]
    pub ex_sim: Cell,
    #[serde(rename = "ET_sim", with = "cell_text")]
    pub et_sim: Cell,
    #[serde(rename = "ET_sim_stderr", with = "cell_text")]
    pub et_sim_stderr: Cell,
    #[serde(rename = "p_L", with = "cell_text")]
    pub p_l: Cell,
    #[serde(with = "cell_text")]
    pub p_empirical: Cell,
    pub verdict: String,
    #[serde(rename = "EX_gap", with = "cell_text")]
    pub ex_gap: Cell,
    #[serde(rename = "ET_gap", with = "cell_text")]
    pub et_gap: Cell,
    #[serde(with = "as_text")]
    pub divergence: Divergence,
    #[serde(with = "cell_text")]
    pub cap_gap: Cell,
}

fn gap(sim: Cell, analytic: Cell) -> Cell {
    match (sim, analytic) {
        (Cell::Value(s), Cell::Value(a)) if a != 0.0 => Cell::Value((s - a) / a),
        _ => Cell::Na,
    }
}

impl CompareRow {
    pub fn new(row: ResultRow, divergence: Divergence, cap_gap: Cell) -> Self {
        Self {
            ex_gap: gap(row.ex_sim, row.ex_analytic),
            et_gap: gap(row.et_sim, row.et_analytic),
            lambda_hat: row.lambda_hat,
            n: row.n,
            k: row.k,
            model: row.model,
            q: row.q,
            ex_analytic: row.ex_analytic,
            et_analytic: row.et_analytic,
            ex_sim: row.ex_sim,
            et_sim: row.et_sim,
            et_sim_stderr: row.et_sim_stderr,
            p_l: row.p_l,
            p_empirical: row.p_empirical,
            verdict: row.verdict,
            divergence,
            cap_gap,
        }
    }
}

/// Writes rows with a header line.
pub fn write_rows<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<T: DeserializeOwned, R: Read>(input: R) -> Result<Vec<T>> {
    csv::Reader::from_reader(input).deserialize().map(|r| r.map_err(HarnessError::from)).collect()
}
