//! Per-slot trace as CSV: `slot,n_b,G_t,successes,windowed_ET`.

use std::collections::VecDeque;
use std::io::Write;

use aloha_core::sim::{run_observed, SimConfig, SimMetrics, SlotObserver, SlotOutcome, SlotView};

use crate::error::{HarnessError, Result};

/// Default span, in slots, of the trailing window behind `windowed_ET`.
pub const DEFAULT_TRACE_WINDOW: u64 = 10_000;

/// Writes one line every `stride` slots. `successes` is cumulative;
/// `windowed_ET` is the mean queueing delay of packets that departed in the
/// trailing `window` slots, `NA` when there were none.
pub struct TraceWriter<W: Write> {
    out: W,
    stride: u64,
    window: u64,
    successes: u64,
    recent: VecDeque<(u64, u64)>,
    recent_sum: u64,
    error: Option<std::io::Error>,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(mut out: W, stride: u64, window: u64) -> Result<Self> {
        if stride == 0 || window == 0 {
            return Err(HarnessError::Config("trace stride and window must be positive".into()));
        }
        writeln!(out, "slot,n_b,G_t,successes,windowed_ET")?;
        Ok(Self { out, stride, window, successes: 0, recent: VecDeque::new(), recent_sum: 0, error: None })
    }

    pub fn finish(mut self) -> Result<W> {
        if let Some(e) = self.error.take() {
            return Err(e.into());
        }
        self.out.flush()?;
        Ok(self.out)
    }
}

impl<W: Write> SlotObserver for TraceWriter<W> {
    fn observe(&mut self, view: &SlotView<'_>) -> aloha_core::Result<()> {
        if let SlotOutcome::Success { queueing_delay, .. } = view.outcome {
            self.successes += 1;
            self.recent.push_back((view.slot, queueing_delay));
            self.recent_sum += queueing_delay;
        }
        while let Some(&(slot, delay)) = self.recent.front() {
            if slot + self.window > view.slot {
                break;
            }
            self.recent.pop_front();
            self.recent_sum -= delay;
        }
        if self.error.is_some() || !view.slot.is_multiple_of(self.stride) {
            return Ok(());
        }
        let et = if self.recent.is_empty() {
            "NA".to_string()
        } else {
            format!("{:?}", self.recent_sum as f64 / self.recent.len() as f64)
        };
        let line =
            writeln!(self.out, "{},{},{:?},{},{}", view.slot, view.backlogged, view.attempt_rate, self.successes, et);
        // Keep simulating; the error surfaces in `finish`.
        if let Err(e) = line {
            self.error = Some(e);
        }
        Ok(())
    }
}

/// Runs `config` once while tracing into `out`.
pub fn trace_run<W: Write>(config: &SimConfig, out: W, stride: u64, window: u64) -> Result<(SimMetrics, W)> {
    let mut writer = TraceWriter::new(out, stride, window)?;
    let metrics = run_observed(config, &mut writer)?;
    Ok((metrics, writer.finish()?))
}
