//! Command-line entry point.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, ValueEnum};

use crate::baselines::Scheme;
use crate::error::{Error, Result};
use crate::harness::{emit_results, run_experiment, ExperimentKind, ExperimentPlan};
use crate::model::SystemConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Experiment {
    Convergence,
    SweepNm,
    SweepK,
    SweepPower,
}

impl From<Experiment> for ExperimentKind {
    fn from(e: Experiment) -> Self {
        match e {
            Experiment::Convergence => ExperimentKind::Convergence,
            Experiment::SweepNm => ExperimentKind::SweepNm,
            Experiment::SweepK => ExperimentKind::SweepK,
            Experiment::SweepPower => ExperimentKind::SweepPower,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

/// Sum-rate experiments for a fluid-antenna base station with a liquid
/// metasurface.
#[derive(Debug, Parser)]
#[command(name = "fas-lim", version)]
struct Args {
    /// TOML scenario file; without it the 8-antenna, 8-element, 4-user
    /// desk-scale scenario is used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "convergence")]
    experiment: Experiment,
    #[arg(long, default_value_t = 20)]
    drops: usize,
    /// Master seed; defaults to the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Comma-separated scheme names.
    #[arg(long, value_delimiter = ',')]
    schemes: Option<Vec<String>>,
    /// Comma-separated sweep values replacing the experiment's defaults.
    #[arg(long, value_delimiter = ',')]
    sweep: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    correlation: Option<Switch>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    workers: Option<usize>,
    /// Fitness evaluations for the genetic-algorithm baseline.
    #[arg(long, default_value_t = 2000)]
    ga_budget: usize,
    /// Write measured wall times instead of zeros.
    #[arg(long)]
    timings: bool,
}

fn plan_from(args: &Args) -> Result<(SystemConfig, ExperimentPlan)> {
    let cfg = match &args.config {
        Some(path) => SystemConfig::load(path)?,
        None => SystemConfig::desk_scale(),
    };
    let kind = ExperimentKind::from(args.experiment);
    let mut plan = ExperimentPlan::new(kind, args.drops, args.seed.unwrap_or(cfg.seed));
    if let Some(list) = &args.schemes {
        plan.schemes = list.iter().map(|s| s.parse::<Scheme>()).collect::<Result<_>>()?;
    }
    if let Some(values) = &args.sweep {
        plan.sweep = values.clone();
    }
    plan.correlation = args.correlation.map(|c| c == Switch::On);
    plan.workers = args
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if plan.workers == 0 {
        return Err(Error::config("workers", "must be at least 1"));
    }
    plan.ga_budget = args.ga_budget;
    plan.validate()?;
    Ok((cfg, plan))
}

/// Parses `argv` (program name first), runs the experiment and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let (cfg, plan) = match plan_from(&args) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let outcome = run_experiment(&plan, &cfg).and_then(|result| {
        emit_results(&result, &args.out, args.timings)?;
        Ok(result)
    });
    match outcome {
        Ok(result) => {
            for row in &result.rows {
                println!(
                    "{} {} = {:.4} bits/s/Hz over {} drops",
                    plan.kind, row.scheme, row.mean_rate, row.drops
                );
            }
            println!("wrote {}", args.out.join("results.csv").display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                EXIT_CONFIG
            } else {
                EXIT_RUNTIME
            }
        }
    }
}
