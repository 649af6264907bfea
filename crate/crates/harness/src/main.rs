use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use aloha_core::batch::Execution;
use aloha_core::{Cutoff, Model, Scenario};
use aloha_harness::commands::{analyze_report, emit_rows, regions_report};
use aloha_harness::experiment::{analyze_spec, build_policy, first_config, SimOptions};
use aloha_harness::spec::derived_seeds;
use aloha_harness::trace::{trace_run, DEFAULT_TRACE_WINDOW};
use aloha_harness::{compare_spec, exit_code, simulate_spec, ExperimentSpec, HarnessError, QRule, Result};
use clap::{Args, Parser, Subcommand};

/// Delay and stability of buffered slotted Aloha under K-exponential backoff.
#[derive(Parser)]
#[command(name = "aloha", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analytic delays and stability of one scenario.
    Analyze {
        #[command(flatten)]
        point: PointArgs,
        /// Also write the analysis as a CSV row.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stable regions, the quasi-stability threshold and undesired points.
    Regions {
        #[arg(long, default_value_t = 100)]
        n: u32,
        #[arg(long)]
        lambda_hat: f64,
        /// Retransmission factors at which to report the undesired point.
        #[arg(long = "q", num_args = 1.., default_values_t = [1.0 - (-1.0f64).exp()])]
        qs: Vec<f64>,
    },
    /// Simulate one scenario (flags) or a grid (--spec) and write result rows.
    Simulate(SimArgs),
    /// As simulate, with relative gaps and divergence tags.
    Compare(SimArgs),
    /// Evaluate the grid of a spec file.
    Sweep {
        #[command(flatten)]
        sim: SimArgs,
        /// Skip simulation and emit analytic rows only.
        #[arg(long)]
        analytic_only: bool,
    },
}

#[derive(Args, Clone)]
struct PointArgs {
    #[arg(long, default_value_t = 100)]
    n: u32,
    #[arg(long)]
    lambda_hat: Option<f64>,
    /// Cutoff phase: a positive integer or `inf`.
    #[arg(long, default_value = "inf")]
    k: String,
    /// Fixed retransmission factor.
    #[arg(long, conflicts_with = "q_rule")]
    q: Option<f64>,
    /// `1/n`, `1-1/e`, `optimal_geo` or a number.
    #[arg(long)]
    q_rule: Option<String>,
    /// `prob` or `window`.
    #[arg(long, default_value = "prob")]
    model: String,
}

impl PointArgs {
    fn q_rule(&self) -> Result<QRule> {
        match (&self.q, &self.q_rule) {
            (Some(q), _) => format!("{q}").parse(),
            (None, Some(rule)) => rule.parse(),
            (None, None) => Ok(QRule::Robust),
        }
    }

    fn parts(&self) -> Result<(f64, Cutoff, Model, QRule)> {
        let lambda_hat = self.lambda_hat.ok_or_else(|| HarnessError::Config("--lambda-hat is required".into()))?;
        Ok((lambda_hat, self.k.parse()?, self.model.parse()?, self.q_rule()?))
    }

    fn scenario(&self) -> Result<Scenario> {
        let (lambda_hat, cutoff, model, rule) = self.parts()?;
        let q = rule.resolve(self.n, lambda_hat)?;
        Ok(Scenario::new(self.n, lambda_hat, build_policy(model, q, cutoff)?)?)
    }
}

#[derive(Args, Clone)]
struct SimArgs {
    #[command(flatten)]
    point: PointArgs,
    /// Experiment spec file; flags given alongside override its values.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    slots: Option<u64>,
    #[arg(long)]
    warmup: Option<u64>,
    /// Base seed; replication seeds are derived from it.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    phase_cap: Option<u32>,
    /// CSV output path; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write a per-slot trace of the first grid point's first replication.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    trace_stride: u64,
    #[arg(long, default_value_t = DEFAULT_TRACE_WINDOW)]
    trace_window: u64,
    /// Check the attempt-rate bound at every slot.
    #[arg(long)]
    check_invariants: bool,
    /// Run replications one after another.
    #[arg(long)]
    sequential: bool,
}

impl SimArgs {
    fn spec(&self) -> Result<ExperimentSpec> {
        let mut spec = match &self.spec {
            Some(path) => ExperimentSpec::from_path(path)?,
            None => {
                let (lambda_hat, cutoff, model, rule) = self.point.parts()?;
                ExperimentSpec::single(self.point.n, lambda_hat, cutoff, model, rule)
            }
        };
        if let Some(v) = self.slots {
            spec.slots = v;
        }
        if let Some(v) = self.warmup {
            spec.warmup = v;
        }
        if self.seed.is_some() || self.replications.is_some() {
            let reps = self.replications.unwrap_or(spec.replications());
            spec.seeds = derived_seeds(self.seed.unwrap_or(aloha_harness::spec::DEFAULT_SEED), reps);
        }
        if let Some(v) = self.phase_cap {
            spec.phase_cap = v;
        }
        if let Some(v) = &self.out {
            spec.output = Some(v.clone());
        }
        spec.validate()?;
        Ok(spec)
    }

    fn options(&self) -> SimOptions {
        SimOptions {
            execution: if self.sequential { Execution::Sequential } else { Execution::Parallel },
            check_invariants: self.check_invariants,
        }
    }

    fn write_trace(&self, spec: &ExperimentSpec) -> Result<()> {
        if let Some(path) = &self.trace {
            let config = first_config(spec, self.options())?;
            let file = BufWriter::new(std::fs::File::create(path)?);
            trace_run(&config, file, self.trace_stride, self.trace_window)?;
        }
        Ok(())
    }
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Analyze { point, out } => {
            let scenario = point.scenario()?;
            let mut stdout = std::io::stdout().lock();
            let code = analyze_report(&scenario, &mut stdout)?;
            stdout.flush()?;
            if let Some(path) = out {
                let (lambda_hat, cutoff, model, rule) = point.parts()?;
                let spec = ExperimentSpec::single(point.n, lambda_hat, cutoff, model, rule);
                emit_rows(&analyze_spec(&spec)?, Some(&path))?;
            }
            if code == exit_code::UNSTABLE_QUEUE {
                eprintln!("error: unstable queue: offered load at p_L is at least one");
            }
            Ok(code)
        }
        Command::Regions { n, lambda_hat, qs } => {
            regions_report(n, lambda_hat, &qs, &mut std::io::stdout().lock())?;
            Ok(exit_code::OK)
        }
        Command::Simulate(args) => {
            let spec = args.spec()?;
            args.write_trace(&spec)?;
            emit_rows(&simulate_spec(&spec, args.options())?, spec.output.as_deref())?;
            Ok(exit_code::OK)
        }
        Command::Compare(args) => {
            let spec = args.spec()?;
            args.write_trace(&spec)?;
            emit_rows(&compare_spec(&spec, args.options())?, spec.output.as_deref())?;
            Ok(exit_code::OK)
        }
        Command::Sweep { sim, analytic_only } => {
            if sim.spec.is_none() {
                return Err(HarnessError::Config("sweep needs --spec".into()));
            }
            let spec = sim.spec()?;
            let rows = if analytic_only { analyze_spec(&spec)? } else { simulate_spec(&spec, sim.options())? };
            emit_rows(&rows, spec.output.as_deref())?;
            Ok(exit_code::OK)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
