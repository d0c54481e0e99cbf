use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ogd_bzc::harness::{
    best_safe_linear, reproduce, safety_fuzz, write_trace_csv, Experiment, Figure, GridSpec, HarnessError, RunConfig,
};
use ogd_bzc::ogd::{RunError, RunTrace};

#[derive(Parser)]
#[command(name = "ogd-bzc", version, about = "Safe online control of constrained linear systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run OGD-BZC once and write its trace.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (defaults to run.out, then the current directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the CSV and plot script for one figure of the two-state example.
    Reproduce {
        figure: Figure,
        #[arg(long)]
        out: PathBuf,
        /// Use this config instead of the built-in example.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run every disturbance regime for many seeds and count constraint violations.
    Fuzz {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seeds: usize,
        /// Steps per run (defaults to run.T).
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Regret of one configured run against the best certified-safe linear gain.
    Benchmark {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        grid_step: Option<f64>,
    },
}

fn load(path: Option<&Path>, seed: Option<u64>) -> Result<Experiment, HarnessError> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::toy(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Experiment::new(cfg)
}

fn print_summary(trace: &RunTrace) {
    let p = &trace.params;
    println!("steps: {}", trace.steps.len());
    println!("H: {}  eta: {}  epsilon: {}  epsilon_capped: {}", p.h, p.eta, p.epsilon, p.epsilon_capped);
    println!("total cost: {}", trace.total_cost());
    println!("max |x|: {}  max |u|: {}", trace.max_state_norm(), trace.max_input_norm());
    println!("projection fallbacks: {}", trace.bisection_steps.len());
}

fn write_trace(exp: &Experiment, dir: &Path, trace: &RunTrace) -> Result<PathBuf, HarnessError> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join("trace.csv");
    let header = exp.header(&[("horizon", trace.params.horizon.to_string())]);
    write_trace_csv(std::fs::File::create(&path)?, &header, trace)?;
    Ok(path)
}

fn execute(cmd: Command) -> Result<(), HarnessError> {
    match cmd {
        Command::Run { config, seed, out } => {
            let exp = load(Some(&config), seed)?;
            let dir = out.or_else(|| exp.config.run.out.clone()).unwrap_or_else(|| PathBuf::from("."));
            match exp.run() {
                Ok(trace) => {
                    print_summary(&trace);
                    println!("trace: {}", write_trace(&exp, &dir, &trace)?.display());
                    Ok(())
                }
                Err(HarnessError::Run(RunError::SafetyViolation { t, state_ok, input_ok, trace })) => {
                    let path = write_trace(&exp, &dir, &trace)?;
                    eprintln!("partial trace: {}", path.display());
                    Err(HarnessError::Run(RunError::SafetyViolation { t, state_ok, input_ok, trace }))
                }
                Err(e) => Err(e),
            }
        }
        Command::Reproduce { figure, out, config, seed } => {
            let exp = load(config.as_deref(), seed)?;
            for path in reproduce(&exp, figure, &out)? {
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::Fuzz { config, seeds, horizon } => {
            let exp = load(Some(&config), None)?;
            let horizon = horizon.unwrap_or(exp.horizon());
            let s = safety_fuzz(&exp, seeds, horizon)?;
            println!("runs: {}  horizon: {}", s.runs, s.horizon);
            for r in &s.regimes {
                println!(
                    "{}: runs {} violations {} member failures {} min state margin {} min input margin {} fallbacks {}",
                    r.regime,
                    r.runs,
                    r.violations,
                    r.member_failures,
                    fmt_opt(r.min_state_margin),
                    fmt_opt(r.min_input_margin),
                    r.bisection_steps
                );
            }
            for v in &s.violations {
                println!("violation: seed {} regime {} step {}", v.seed, v.regime, v.t);
            }
            println!(
                "max |x| {} (b_x {})  max |u| {} (b_u {})  max grad {} (G_f {})",
                s.max_state_norm(),
                fmt_opt(s.bounds.b_x),
                s.max_input_norm(),
                fmt_opt(s.bounds.b_u),
                s.max_grad_norm(),
                s.bounds.g_f
            );
            if s.clean() {
                Ok(())
            } else {
                Err(HarnessError::Infeasible(format!(
                    "{} violations, {} membership failures",
                    s.violations.len(),
                    s.member_failures
                )))
            }
        }
        Command::Benchmark { config, grid_step } => {
            let exp = load(Some(&config), None)?;
            let grid = GridSpec { step: grid_step.unwrap_or(exp.config.benchmark.step), ..exp.config.benchmark };
            let trace = exp.run()?;
            let b = best_safe_linear(&exp.sys, &exp.spec, &trace.costs, &trace.disturbances(), &grid)?;
            let regret = trace.total_cost() - b.total_cost;
            println!("grid step: {}  safe points: {} of {}", b.grid_step, b.safe_points, b.total_points);
            println!("removed: {} unstable, {} not certified safe", b.removed_unstable, b.removed_unsafe);
            println!("K*: {:?}", b.k_star.transpose().as_slice());
            println!("K* trajectory safe: {}", b.trajectory_safe);
            println!("algorithm cost: {}  benchmark cost: {}", trace.total_cost(), b.total_cost);
            println!("regret: {}  regret / T: {}", regret, regret / trace.steps.len() as f64);
            Ok(())
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |x| x.to_string())
}

fn main() -> ExitCode {
    // clap would exit with 2 on bad arguments, which is reserved for safety failures
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
