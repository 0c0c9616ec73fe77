use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use eirl1::harness::with_thread_limit;
use eirl1::{AlphaSchedule, SolverKind, TraceLevel};
use eirl1_cli::commands::{resolve_config, thread_limit};
use eirl1_cli::{cmd_bench, cmd_diagnose, cmd_generate, cmd_solve, CliError, Overrides, StartPoint};

/// Sparse recovery with extrapolated iteratively reweighted l1 and baselines.
#[derive(Debug, Parser)]
#[command(name = "lp-eirl1", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a synthetic compressed-sensing instance and write it to disk.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write CSV copies of the arrays.
        #[arg(long)]
        csv: bool,
    },
    /// Solve a stored instance and write its trace and summary.
    Solve {
        instance: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        flags: Flags,
        #[arg(long, value_enum, default_value_t = X0::Gaussian)]
        x0: X0,
    },
    /// Run seeded trials for every configured solver and aggregate them.
    Bench {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        flags: Flags,
    },
    /// Recompute diagnostics from a trace CSV.
    Diagnose {
        trace: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        /// Momentum used for the run: a number in [0, 1) or `nesterov`.
        #[arg(long, default_value = "0.9")]
        alpha: String,
        #[arg(long, default_value = "eirl1")]
        solver: String,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct Flags {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    solver: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    opttol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    trace: Option<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum X0 {
    Gaussian,
    Zeros,
}

impl Flags {
    fn overrides(&self) -> Result<Overrides, CliError> {
        Ok(Overrides {
            solver: self.solver.as_deref().map(str::parse::<SolverKind>).transpose()?,
            alpha: self.alpha.clone(),
            p: self.p,
            lambda: self.lambda,
            seed: self.seed,
            opttol: self.opttol,
            max_iter: self.max_iter,
            trace: self.trace.as_deref().map(str::parse::<TraceLevel>).transpose()?,
        })
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let threads = thread_limit()?;
    match cli.command {
        Command::Generate { config, out, seed, csv } => {
            let cfg = resolve_config(config.as_deref(), &Overrides { seed, ..Default::default() })?;
            let sidecar = cmd_generate(&cfg, &out, csv)?;
            log::info!("wrote {}x{} instance (seed {}) to {}", sidecar.m, sidecar.n, sidecar.seed, out.display());
        }
        Command::Solve { instance, out, flags, x0 } => {
            let o = flags.overrides()?;
            let cfg = resolve_config(flags.config.as_deref(), &o)?;
            let start = match x0 {
                X0::Gaussian => StartPoint::Gaussian,
                X0::Zeros => StartPoint::Zeros,
            };
            let s = with_thread_limit(threads, || cmd_solve(&instance, &cfg, o.seed, start, &out))?;
            println!(
                "{}: {:?} after {} iterations, support {}, diagnostics {}",
                s.solver,
                s.termination,
                s.iterations,
                s.final_support_size,
                if s.diagnostics.passed { "passed" } else { "FAILED" }
            );
        }
        Command::Bench { out, flags } => {
            let cfg = resolve_config(flags.config.as_deref(), &flags.overrides()?)?;
            let outcome = with_thread_limit(threads, || cmd_bench(&cfg, &out))?;
            for s in outcome.stats() {
                println!(
                    "{:<20} median iters {:>7.1}  mean mse {:.3e}  support {:.1}  converged {}/{}",
                    s.solver, s.median_iterations, s.mean_final_mse, s.mean_support_size, s.converged_trials, s.trials
                );
            }
            if outcome.all_failed() {
                return Err(CliError::Runtime("every trial failed numerically".into()));
            }
        }
        Command::Diagnose { trace, beta, alpha, solver, out } => {
            let kind: SolverKind = solver.parse()?;
            let schedule: AlphaSchedule = alpha.parse()?;
            let report = cmd_diagnose(&trace, kind, beta, schedule)?;
            let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Runtime(e.to_string()))?;
            match out {
                Some(path) => std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?,
                None => println!("{text}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
