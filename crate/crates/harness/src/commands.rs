//! Text reports and CSV output behind the CLI subcommands.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use aloha_core::analytic::{Delay, Divergence as Unbounded};
use aloha_core::stability::{
    delay_stable_envelope_exp, delay_stable_region_geo, lambda0, optimal_q_geo, stable_region_exp, stable_region_geo,
    undesired_point, Reason,
};
use aloha_core::Scenario;
use serde::Serialize;

use crate::error::{exit_code, HarnessError, Result};
use crate::experiment::analyze_point;
use crate::rows::{write_rows, Cell};

/// Prints the analytic report of one scenario and returns the exit code:
/// [`exit_code::UNSTABLE_QUEUE`] when the queue at `p_L` is overloaded,
/// otherwise [`exit_code::OK`]. A missing stable point is an error.
pub fn analyze_report<W: Write>(scenario: &Scenario, out: &mut W) -> Result<i32> {
    let analysis = analyze_point(scenario);
    let Some(fp) = analysis.fixed_point else {
        return Err(aloha_core::Error::NoStablePoint { lambda_hat: scenario.lambda_hat }.into());
    };
    let policy = &scenario.policy;
    writeln!(
        out,
        "scenario: n={} lambda_hat={} K={} model={} q={}",
        scenario.n, scenario.lambda_hat, policy.cutoff, policy.model, policy.q
    )?;
    writeln!(out, "p_L: {}", fp.p_large)?;
    writeln!(out, "p_S: {}", fp.p_small)?;
    writeln!(out, "E[X]: {}", analysis.ex)?;
    match &analysis.note {
        Some(note) if analysis.et == Cell::Inf => writeln!(out, "E[T]: INF ({note})")?,
        _ => writeln!(out, "E[T]: {}", analysis.et)?,
    }
    let reasons: Vec<&str> = analysis.verdict.reasons.iter().map(|r| r.id()).collect();
    writeln!(out, "verdict: {}", analysis.verdict.class)?;
    writeln!(out, "reasons: {}", if reasons.is_empty() { "none".to_string() } else { reasons.join(", ") })?;
    if let Some(p) = analysis.verdict.p_operating {
        writeln!(out, "operating point: {p}")?;
    }
    let overloaded = analysis.verdict.reasons.contains(&Reason::QueueOverload)
        || matches!(analysis.delays.map(|d| d.queueing), Some(Delay::Infinite(Unbounded::UnstableQueue)));
    Ok(if overloaded { exit_code::UNSTABLE_QUEUE } else { exit_code::OK })
}

/// Prints the stable regions of both backoff families at `(n, lambda_hat)`,
/// the quasi-stability threshold and the undesired point at each `q`.
pub fn regions_report<W: Write>(n: u32, lambda_hat: f64, qs: &[f64], out: &mut W) -> Result<()> {
    let geo = stable_region_geo(n, lambda_hat)?;
    let geo_delay = delay_stable_region_geo(n, lambda_hat)?;
    let exp = stable_region_exp(lambda_hat)?;
    let envelope = delay_stable_envelope_exp(lambda_hat)?;
    writeln!(out, "n: {n}")?;
    writeln!(out, "lambda_hat: {lambda_hat}")?;
    writeln!(out, "geometric stable region: {geo}")?;
    writeln!(out, "geometric delay-stable region: {geo_delay}")?;
    writeln!(out, "geometric optimal q: {}", optimal_q_geo(n, lambda_hat)?)?;
    writeln!(out, "exponential stable region: {exp}")?;
    writeln!(out, "exponential delay-stable region (outer bound): {}", envelope.region)?;
    writeln!(out, "lambda0: {}", lambda0())?;
    for &q in qs {
        let u = undesired_point(n, q)?;
        writeln!(
            out,
            "undesired point at q={q}: {} (exact {}, approx {}, node condition {}, second moment diverges {})",
            u.selected, u.exact, u.approx, u.node_condition, u.second_moment_diverges
        )?;
    }
    Ok(())
}

/// Writes CSV rows to `path`, or to standard output.
pub fn emit_rows<T: Serialize>(rows: &[T], path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => {
            let file = File::create(p)
                .map_err(|e| HarnessError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", p.display()))))?;
            write_rows(rows, BufWriter::new(file))
        }
        None => write_rows(rows, std::io::stdout().lock()),
    }
}
