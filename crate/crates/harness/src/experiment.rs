//! Grid evaluation: analytic predictions and replicated simulations.

use std::cmp::Ordering;

use aloha_core::analytic::{mean_delays, solve_success_probability, Delay, FixedPoint, MeanDelays};
use aloha_core::batch::{mean_and_stderr, run_batch, Execution};
use aloha_core::sim::{combine_verdicts, Monitors, SimConfig, SimMetrics, SimVerdict};
use aloha_core::stability::{classify, lambda0, StabilityClass, StabilityVerdict};
use aloha_core::{BackoffPolicy, Cutoff, Error as CoreError, Model, Scenario};

use crate::error::Result;
use crate::rows::{Cell, CompareRow, Divergence, ResultRow};
use crate::spec::ExperimentSpec;

/// Distance from the quasi-stability threshold inside which exponential-type
/// backoff is tagged as likely to diverge from the analysis.
pub const NEAR_LAMBDA0: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub model: Model,
    pub cutoff: Cutoff,
    pub n: u32,
    pub lambda_hat: f64,
}

impl GridPoint {
    fn order(&self, other: &Self) -> Ordering {
        (self.model, self.cutoff, self.n)
            .cmp(&(other.model, other.cutoff, other.n))
            .then(self.lambda_hat.total_cmp(&other.lambda_hat))
    }
}

impl ExperimentSpec {
    /// Grid points in output order: model, then K, n and lambda_hat.
    pub fn points(&self) -> Vec<GridPoint> {
        let mut points = Vec::new();
        for &model in &self.models {
            for &cutoff in &self.cutoffs {
                for &n in &self.ns {
                    for &lambda_hat in &self.lambda_hats {
                        points.push(GridPoint { model, cutoff, n, lambda_hat });
                    }
                }
            }
        }
        points.sort_by(GridPoint::order);
        points.dedup_by(|a, b| a.order(b) == Ordering::Equal);
        points
    }
}

/// The simulated policy. Window runs need whole windows, so they use
/// `ceil(2/q^i) - 1`.
pub fn build_policy(model: Model, q: f64, cutoff: Cutoff) -> aloha_core::Result<BackoffPolicy> {
    match model {
        Model::Probability => BackoffPolicy::probability(q, cutoff),
        Model::Window => BackoffPolicy::window_integer(q, cutoff),
    }
}

/// Analytic view of one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub fixed_point: Option<FixedPoint>,
    pub verdict: StabilityVerdict,
    /// Delays at `p_L`, when they can be evaluated.
    pub delays: Option<MeanDelays>,
    pub ex: Cell,
    /// `INF` unless the scenario is stable with finite delay at `p_L`.
    pub et: Cell,
    /// Why `et` is `INF`.
    pub note: Option<String>,
}

fn delays_at(scenario: &Scenario, p: f64) -> aloha_core::Result<MeanDelays> {
    match mean_delays(scenario, p) {
        // Unbounded integer windows have no closed form; the real-valued
        // windows differ from them only in rounding.
        Err(CoreError::UnsupportedK(_)) if scenario.policy.model == Model::Window => {
            let policy = BackoffPolicy::window(scenario.policy.q, scenario.policy.cutoff)?;
            mean_delays(&Scenario { policy, ..scenario.clone() }, p)
        }
        other => other,
    }
}

/// Evaluates a scenario at its desired point `p_L`. The mean queueing delay
/// is reported as `INF` whenever the classification is not stable with
/// finite delay, including when the network drifts to the undesired point.
pub fn analyze_point(scenario: &Scenario) -> Analysis {
    let verdict = classify(scenario);
    let fixed_point = solve_success_probability(scenario.lambda_hat).ok();
    let delays = fixed_point.as_ref().and_then(|fp| match delays_at(scenario, fp.p_large) {
        Ok(d) => Some(Ok(d)),
        Err(CoreError::DivergentMean { .. }) => None,
        Err(e) => Some(Err(e)),
    });
    let (ex, mut et, mut note) = match (&fixed_point, &delays) {
        (None, _) => (Cell::Na, Cell::Inf, Some("no stable point: lambda_hat > 1/e".to_string())),
        (Some(_), None) => (Cell::Inf, Cell::Inf, Some("mean service time diverges (q <= 1 - p_L)".to_string())),
        (Some(_), Some(Err(e))) => (Cell::Na, Cell::Na, Some(e.to_string())),
        (Some(_), Some(Ok(d))) => match d.queueing {
            Delay::Finite(t) => (Cell::Value(d.access), Cell::Value(t), None),
            Delay::Infinite(why) => (Cell::Value(d.access), Cell::Inf, Some(why.to_string())),
        },
    };
    if verdict.class != StabilityClass::StableFiniteDelay {
        et = Cell::Inf;
        let reasons: Vec<&str> = verdict.reasons.iter().map(|r| r.id()).collect();
        let mut text = format!("{}: {}", verdict.class, reasons.join(", "));
        if let Some(detail) = note {
            text = format!("{text}; {detail}");
        }
        note = Some(text);
    }
    Analysis { fixed_point, verdict, delays: delays.and_then(|d| d.ok()), ex, et, note }
}

/// Options shared by the simulating commands.
#[derive(Debug, Clone, Copy, Default)]
pub struct SimOptions {
    pub execution: Execution,
    /// Check the attempt-rate bound at every slot; a violation aborts.
    pub check_invariants: bool,
}

/// Replication summary of one grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimSummary {
    pub ex: Cell,
    /// `INF` when the combined verdict is not converged.
    pub et: Cell,
    pub et_stderr: Cell,
    pub p_empirical: Cell,
    pub verdict: SimVerdict,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<(f64, Option<f64>)> {
    let v: Vec<f64> = values.flatten().collect();
    mean_and_stderr(&v)
}

pub fn summarize(metrics: &[SimMetrics]) -> SimSummary {
    let verdict = combine_verdicts(&metrics.iter().map(|m| m.verdict).collect::<Vec<_>>());
    let ex = Cell::from_option(mean_of(metrics.iter().map(|m| m.mean_access_delay)).map(|(m, _)| m));
    let p_empirical = Cell::from_option(mean_of(metrics.iter().map(|m| m.p_empirical)).map(|(m, _)| m));
    let (et, et_stderr) = match (verdict, mean_of(metrics.iter().map(|m| m.mean_queueing_delay))) {
        (SimVerdict::Converged, Some((m, se))) => (Cell::Value(m), Cell::from_option(se)),
        (SimVerdict::Converged, None) => (Cell::Na, Cell::Na),
        _ => (Cell::Inf, Cell::Na),
    };
    SimSummary { ex, et, et_stderr, p_empirical, verdict }
}

struct Job {
    point: GridPoint,
    q: f64,
    scenario: Scenario,
}

fn jobs(spec: &ExperimentSpec) -> Result<Vec<Job>> {
    spec.validate()?;
    spec.points()
        .into_iter()
        .map(|point| {
            let q = spec.q_rule.resolve(point.n, point.lambda_hat)?;
            let policy = build_policy(point.model, q, point.cutoff)?;
            let scenario = Scenario::new(point.n, point.lambda_hat, policy)?;
            Ok(Job { point, q, scenario })
        })
        .collect()
}

fn sim_config(spec: &ExperimentSpec, scenario: &Scenario, seed: u64, cap: u32, opts: SimOptions) -> SimConfig {
    let mut config = SimConfig::new(scenario.clone(), spec.slots, spec.warmup, seed);
    config.phase_cap = cap;
    if opts.check_invariants {
        config = config.with_monitors(Monitors { attempt_rate: true, ..Monitors::none() });
    }
    config
}

/// Runs every replication of every job in one batch and splits the results
/// back per job.
fn run_jobs(spec: &ExperimentSpec, jobs: &[&Job], cap: u32, opts: SimOptions) -> Result<Vec<SimSummary>> {
    let configs: Vec<SimConfig> = jobs
        .iter()
        .flat_map(|job| spec.seeds.iter().map(move |&seed| sim_config(spec, &job.scenario, seed, cap, opts)))
        .collect();
    let metrics = run_batch(&configs, opts.execution)?;
    Ok(metrics.chunks(spec.replications()).map(summarize).collect())
}

fn result_row(job: &Job, sim: &SimSummary) -> ResultRow {
    let analysis = analyze_point(&job.scenario);
    ResultRow {
        lambda_hat: Cell::Value(job.point.lambda_hat),
        n: job.point.n,
        k: job.point.cutoff,
        model: job.point.model,
        q: Cell::Value(job.q),
        ex_analytic: analysis.ex,
        et_analytic: analysis.et,
        ex_sim: sim.ex,
        et_sim: sim.et,
        et_sim_stderr: sim.et_stderr,
        p_l: Cell::from_option(analysis.fixed_point.map(|fp| fp.p_large)),
        p_empirical: sim.p_empirical,
        verdict: sim.verdict.to_string(),
    }
}

/// Simulates every grid point of `spec` and joins the analytic values.
/// Rows come out in [`ExperimentSpec::points`] order whatever the execution
/// mode.
pub fn simulate_spec(spec: &ExperimentSpec, opts: SimOptions) -> Result<Vec<ResultRow>> {
    let jobs = jobs(spec)?;
    let refs: Vec<&Job> = jobs.iter().collect();
    let sims = run_jobs(spec, &refs, spec.phase_cap, opts)?;
    Ok(jobs.iter().zip(&sims).map(|(job, sim)| result_row(job, sim)).collect())
}

/// Analysis-only rows; the simulation columns are `NA` and the verdict is
/// the analytic class.
pub fn analyze_spec(spec: &ExperimentSpec) -> Result<Vec<ResultRow>> {
    let jobs = jobs(spec)?;
    Ok(jobs
        .iter()
        .map(|job| {
            let analysis = analyze_point(&job.scenario);
            let sim = SimSummary {
                ex: Cell::Na,
                et: Cell::Na,
                et_stderr: Cell::Na,
                p_empirical: Cell::Na,
                verdict: SimVerdict::Converged,
            };
            ResultRow { verdict: analysis.verdict.class.to_string(), ..result_row(job, &sim) }
        })
        .collect())
}

fn divergence(point: &GridPoint, et_analytic: Cell) -> Divergence {
    if et_analytic == Cell::Inf {
        Divergence::PredictedInfinite
    } else if point.cutoff != Cutoff::Finite(1) && (point.lambda_hat - lambda0()).abs() <= NEAR_LAMBDA0 {
        Divergence::NearLambda0
    } else {
        Divergence::None
    }
}

/// [`simulate_spec`] plus relative gaps, divergence tags and, for unbounded
/// cutoffs, a rerun at half the phase cap.
pub fn compare_spec(spec: &ExperimentSpec, opts: SimOptions) -> Result<Vec<CompareRow>> {
    let jobs = jobs(spec)?;
    let refs: Vec<&Job> = jobs.iter().collect();
    let sims = run_jobs(spec, &refs, spec.phase_cap, opts)?;
    let unbounded: Vec<&Job> = jobs.iter().filter(|j| j.point.cutoff == Cutoff::Unbounded).collect();
    let half_cap = (spec.phase_cap / 2).max(1);
    let mut halved = run_jobs(spec, &unbounded, half_cap, opts)?.into_iter();
    Ok(jobs
        .iter()
        .zip(&sims)
        .map(|(job, sim)| {
            let cap_gap = if job.point.cutoff == Cutoff::Unbounded {
                let half = halved.next().expect("one halved run per unbounded job");
                match (sim.et, half.et) {
                    (Cell::Value(full), Cell::Value(h)) => Cell::Value((h - full) / full),
                    _ => Cell::Na,
                }
            } else {
                Cell::Na
            };
            let row = result_row(job, sim);
            let tag = divergence(&job.point, row.et_analytic);
            CompareRow::new(row, tag, cap_gap)
        })
        .collect())
}

/// Scenario and simulator configuration of the first grid point, first seed,
/// for tracing.
pub fn first_config(spec: &ExperimentSpec, opts: SimOptions) -> Result<SimConfig> {
    let jobs = jobs(spec)?;
    let job = jobs.first().expect("validated spec has at least one point");
    Ok(sim_config(spec, &job.scenario, spec.seeds[0], spec.phase_cap, opts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::QRule;

    #[test]
    fn points_are_sorted_and_unique() {
        let mut spec = ExperimentSpec::single(10, 0.2, Cutoff::Unbounded, Model::Window, QRule::Robust);
        spec.lambda_hats = vec![0.2, 0.1, 0.2];
        spec.cutoffs = vec![Cutoff::Unbounded, Cutoff::Finite(3)];
        spec.models = vec![Model::Window, Model::Probability];
        let p = spec.points();
        assert_eq!(p.len(), 8);
        assert_eq!((p[0].model, p[0].cutoff, p[0].lambda_hat), (Model::Probability, Cutoff::Finite(3), 0.1));
        assert_eq!((p[7].model, p[7].cutoff, p[7].lambda_hat), (Model::Window, Cutoff::Unbounded, 0.2));
    }

    #[test]
    fn analysis_marks_undesired_point_infinite() {
        let q = 1.0 - (-1.0f64).exp();
        let s = Scenario::new(100, 0.35, BackoffPolicy::probability(q, Cutoff::Unbounded).unwrap()).unwrap();
        let a = analyze_point(&s);
        assert_eq!(a.et, Cell::Inf);
        assert!(matches!(a.ex, Cell::Value(_)));
        assert!(a.note.unwrap().contains("above_lambda0"));
    }

    #[test]
    fn analysis_above_capacity_has_no_operating_point() {
        let s = Scenario::new(100, 0.4, BackoffPolicy::probability(0.5, Cutoff::Finite(10)).unwrap()).unwrap();
        let a = analyze_point(&s);
        assert!(a.fixed_point.is_none());
        assert_eq!((a.ex, a.et), (Cell::Na, Cell::Inf));
    }

    #[test]
    fn unbounded_integer_windows_fall_back_to_real_windows() {
        let q = 1.0 - (-1.0f64).exp();
        let s = Scenario::new(50, 0.1, build_policy(Model::Window, q, Cutoff::Unbounded).unwrap()).unwrap();
        assert!(matches!(analyze_point(&s).et, Cell::Value(_)));
    }
}
