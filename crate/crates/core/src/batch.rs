//! Independent simulation runs, in parallel when the `parallel` feature is
//! enabled. Results always come back in input order, so the output does not
//! depend on the execution mode or the thread count.

use crate::error::Result;
use crate::sim::{self, SimConfig, SimMetrics};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Rayon work stealing; same as `Sequential` without the `parallel`
    /// feature.
    #[default]
    Parallel,
}

/// Runs every configuration and returns the metrics in input order. The
/// first error (in input order) wins.
pub fn run_batch(configs: &[SimConfig], execution: Execution) -> Result<Vec<SimMetrics>> {
    match execution {
        Execution::Sequential => configs.iter().map(sim::run).collect(),
        Execution::Parallel => run_parallel(configs),
    }
}

#[cfg(feature = "parallel")]
fn run_parallel(configs: &[SimConfig]) -> Result<Vec<SimMetrics>> {
    use rayon::prelude::*;
    configs.par_iter().map(sim::run).collect::<Vec<_>>().into_iter().collect()
}

#[cfg(not(feature = "parallel"))]
fn run_parallel(configs: &[SimConfig]) -> Result<Vec<SimMetrics>> {
    configs.iter().map(sim::run).collect()
}

/// Seed of replication `r` derived from a base seed.
pub fn replication_seed(base: u64, r: usize) -> u64 {
    base.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(r as u64))
}

/// Runs `replications` copies of `config` with derived seeds.
pub fn replicate(config: &SimConfig, replications: usize, execution: Execution) -> Result<Vec<SimMetrics>> {
    let configs: Vec<SimConfig> =
        (0..replications).map(|r| config.clone().with_seed(replication_seed(config.seed, r))).collect();
    run_batch(&configs, execution)
}

/// Mean and standard error of a sample; `None` when empty. The standard
/// error is `None` for a single value.
pub fn mean_and_stderr(values: &[f64]) -> Option<(f64, Option<f64>)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return Some((mean, None));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, Some((var / n).sqrt())))
}
