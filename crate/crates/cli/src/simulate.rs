//! `simulate`: run a Monte Carlo study (bias/SD/RMSE of the key targets)
//! or a bootstrap coverage study over a shipped preset or a scenario file.

use std::path::PathBuf;

use endoprobit::simulation::{self, Scenario};

use crate::report::Jsonl;
use crate::Failure;

#[derive(clap::Args)]
pub struct SimulateArgs {
    /// Name of a shipped study design (see --list).
    pub preset: Option<String>,

    /// Scenario JSON file instead of a preset.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// List the shipped study designs and exit.
    #[arg(long)]
    pub list: bool,

    /// Override the replication count.
    #[arg(long)]
    pub reps: Option<usize>,

    /// Override the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Write machine-readable JSONL results here.
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Run a bootstrap coverage study (first model only) instead of the
    /// bias/RMSE summary. Requires --boot.
    #[arg(long)]
    pub coverage: bool,

    /// Bootstrap iterations per replication in coverage mode.
    #[arg(long)]
    pub boot: Option<usize>,

    /// Nominal confidence level in coverage mode.
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
}

pub fn run(args: SimulateArgs) -> Result<(), Failure> {
    if args.list {
        for name in simulation::preset_names() {
            println!("{name}");
        }
        return Ok(());
    }
    let mut scenario = load_scenario(&args)?;
    if let Some(reps) = args.reps {
        scenario.replications = reps;
    }
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }

    if args.coverage {
        let b = args.boot.ok_or_else(|| {
            Failure::Usage("--coverage needs --boot <iterations>".into())
        })?;
        run_coverage(&scenario, b, args.level, args.out.as_deref())
    } else {
        run_mc(&scenario, args.out.as_deref())
    }
}

fn load_scenario(args: &SimulateArgs) -> Result<Scenario, Failure> {
    match (&args.preset, &args.config) {
        (Some(name), None) => simulation::preset(name).map_err(|_| {
            Failure::Usage(format!(
                "unknown preset '{name}'; available: {}",
                simulation::preset_names().join(", ")
            ))
        }),
        (None, Some(path)) => {
            Ok(serde_json::from_reader(std::fs::File::open(path)?)?)
        }
        _ => Err(Failure::Usage(
            "give exactly one of a preset name or --config <file>".into(),
        )),
    }
}

fn run_mc(scenario: &Scenario, out: Option<&std::path::Path>) -> Result<(), Failure> {
    println!(
        "scenario {}: n = {}, {} replications, seed {}",
        scenario.name, scenario.n, scenario.replications, scenario.seed
    );
    let summary = simulation::run_monte_carlo(scenario)?;
    for model in &summary.models {
        println!();
        println!(
            "== {} == ({} used, {} converged, {} failed)",
            model.model, model.used, model.converged, model.failures
        );
        println!(
            "{:<8} {:>9} {:>9} {:>9} {:>9} {:>9}",
            "target", "truth", "mean", "bias", "sd", "rmse"
        );
        for t in &model.targets {
            println!(
                "{:<8} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
                t.target, t.truth, t.mean, t.bias, t.sd, t.rmse
            );
        }
    }
    if let Some(path) = out {
        let mut jsonl = Jsonl::create(path, "simulate", &summary.scenario)?;
        for row in summary.rows() {
            jsonl.record(&WithTag {
                record: "mc",
                row,
            })?;
        }
        jsonl.finish()?;
    }
    Ok(())
}

fn run_coverage(
    scenario: &Scenario,
    b: usize,
    level: f64,
    out: Option<&std::path::Path>,
) -> Result<(), Failure> {
    println!(
        "coverage study {}: n = {}, {} replications, {} bootstrap iterations, level {:.2}",
        scenario.name, scenario.n, scenario.replications, b, level
    );
    let cov = simulation::run_coverage_study(scenario, b, level)?;
    println!(
        "model: {} ({} used, {} failed)",
        scenario.models[0].label(),
        cov.sims_used,
        cov.failures
    );
    println!(
        "{:<8} {:>9} {:>16} {:>16}",
        "target", "truth", "normal cover", "percentile cover"
    );
    for i in 0..cov.targets.len() {
        println!(
            "{:<8} {:>9.4} {:>16.3} {:>16.3}",
            cov.targets[i], cov.truth[i], cov.normal_coverage[i], cov.percentile_coverage[i]
        );
    }
    if let Some(path) = out {
        let mut jsonl = Jsonl::create(path, "simulate --coverage", &cov.scenario)?;
        jsonl.record(&WithTag {
            record: "coverage",
            row: &cov,
        })?;
        jsonl.finish()?;
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct WithTag<T: serde::Serialize> {
    record: &'static str,
    #[serde(flatten)]
    row: T,
}
