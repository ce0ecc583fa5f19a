//! Command-line surface for the endogenous-treatment probit estimator:
//! fit models on CSV data, run the named Monte Carlo studies, replay the
//! identification-failure demonstrations, and convert copula parameters.
//!
//! Exit codes: 0 success, 2 usage or input parse problems, 3 numerical
//! failures (non-convergence, singular information, too many replication
//! failures).

mod demos;
mod estimate;
mod report;
mod simulate;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "endoprobit", version, about, propagate_version = true)]
struct Cli {
    /// Worker threads (default: ENDOPROBIT_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model to a CSV file and report estimates with standard
    /// errors and the treatment effect.
    Estimate(estimate::EstimateArgs),
    /// Run a Monte Carlo study preset (or a scenario config file).
    Simulate(simulate::SimulateArgs),
    /// Identification-failure demonstrations and the positivity scan.
    Identlab(demos::IdentlabArgs),
    /// Copula utilities: dependence conversions and CDF evaluation.
    Copula(demos::CopulaArgs),
}

/// Failures split by who can fix them: `Usage` is the caller's input
/// (exit 2), `Numeric` is the computation itself (exit 3).
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Numeric(String),
}

impl Failure {
    fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Numeric(m) => m,
        }
    }
}

impl From<endoprobit::Error> for Failure {
    fn from(e: endoprobit::Error) -> Self {
        use endoprobit::Error::*;
        match e {
            Domain(_) | Dimension(_) | DegenerateData(_) | UnreachableSpearman { .. } => {
                Failure::Usage(e.to_string())
            }
            _ => Failure::Numeric(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Usage(format!("csv: {e}"))
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Usage(format!("config: {e}"))
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(msg) = init_threads(cli.threads) {
        eprintln!("error: {msg}");
        std::process::exit(2);
    }
    let outcome = match cli.command {
        Command::Estimate(args) => estimate::run(args),
        Command::Simulate(args) => simulate::run(args),
        Command::Identlab(args) => demos::run_identlab(args),
        Command::Copula(args) => demos::run_copula(args),
    };
    if let Err(failure) = outcome {
        eprintln!("error: {}", failure.message());
        std::process::exit(failure.exit_code());
    }
}

fn init_threads(flag: Option<usize>) -> Result<(), String> {
    let n = flag.or_else(|| {
        std::env::var("ENDOPROBIT_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = n {
        if n == 0 {
            return Err("--threads must be at least 1".into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}
