use super::{Counters, SimVerdict};

/// Growth factor between the first- and last-third means of the running
/// queueing delay that flags quasi-stability.
pub const DEFAULT_QUASI_FACTOR: f64 = 3.0;

/// Fraction of arrivals left unserved above which a run counts as exploded.
/// Above the channel capacity `1/e` the deficit is at least
/// `1 - 1/(e lambda_hat)`, about 8% at `lambda_hat = 0.4`; a captured but
/// still mostly served network stays well below this.
const DEFICIT_THRESHOLD: f64 = 0.05;

/// Fraction of backlog steps that must not shrink.
const MONOTONE_FRACTION: f64 = 0.8;

/// Share of the final backlog that must already be queued after the first
/// third of the horizon; linear growth from the start gives one third.
const EARLY_GROWTH_SHARE: f64 = 0.2;

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

/// Flags a series whose last third sits well above
/// its first third without falling back below the midpoint of the two.
///
/// Meant for the running queueing-delay series; the engine also applies it
/// to the backlog series, since under channel capture the delays of the few
/// departing packets can stay erratic while the queues keep growing.
pub fn quasi_stability_detector(series: &[Option<f64>], factor: f64) -> SimVerdict {
    let third = series.len() / 3;
    if third == 0 {
        return SimVerdict::Converged;
    }
    let head = mean(series[..third].iter().flatten().copied());
    let tail_slice = &series[series.len() - third..];
    let tail = mean(tail_slice.iter().flatten().copied());
    match (head, tail) {
        // Packets departed early on but none late: the delay is unbounded.
        (Some(_), None) => SimVerdict::QuasiStableDetected,
        (Some(a), Some(b)) if b > factor * a => {
            let mid = 0.5 * (a + b);
            if tail_slice.iter().flatten().all(|&v| v >= mid) {
                SimVerdict::QuasiStableDetected
            } else {
                SimVerdict::Converged
            }
        }
        _ => SimVerdict::Converged,
    }
}

/// True when departures fall measurably short of arrivals and the backlog
/// grows almost monotonically from the start of the measured horizon.
///
/// A collapse that follows a long stretch of stable operation (the capture
/// effect of a metastable system) is left to [`quasi_stability_detector`].
pub fn explosion_detected(backlog: &[u64], counters: &Counters) -> bool {
    if counters.arrivals == 0 || backlog.len() < 3 {
        return false;
    }
    let deficit = counters.arrivals.saturating_sub(counters.departures) as f64 / counters.arrivals as f64;
    if deficit <= DEFICIT_THRESHOLD {
        return false;
    }
    let steps = backlog.len() - 1;
    let rising = backlog.windows(2).filter(|w| w[1] >= w[0]).count();
    let last = backlog[steps];
    let early = backlog[backlog.len() / 3 - 1];
    rising as f64 >= MONOTONE_FRACTION * steps as f64
        && last > backlog[0]
        && early as f64 >= EARLY_GROWTH_SHARE * last as f64
}

/// Verdict over independent replications of one scenario. Overload makes
/// every replication explode; a metastable system collapses in some of
/// them at random times, which counts as quasi-stable.
pub fn combine_verdicts(verdicts: &[SimVerdict]) -> SimVerdict {
    if !verdicts.is_empty() && verdicts.iter().all(|&v| v == SimVerdict::Exploded) {
        SimVerdict::Exploded
    } else if verdicts.iter().any(|&v| v != SimVerdict::Converged) {
        SimVerdict::QuasiStableDetected
    } else {
        SimVerdict::Converged
    }
}
