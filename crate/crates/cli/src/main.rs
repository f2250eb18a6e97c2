//! `finsler-lab`: run one configured experiment and write its report and
//! plot series, or list the available experiments.
//!
//! Exit codes: 0 when every check passes, 2 when a check fails, 1 on any
//! error (including an invalid config, in which case nothing is written).

mod config;
mod experiments;
mod report;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use config::{Experiment, ExperimentConfig};
use report::{write_atomic, RunReport, Timing, REPORT_SCHEMA};

/// Worker threads for the library's parallel loops; unset means one.
const THREADS_VAR: &str = "FINSLER_LAB_THREADS";

#[derive(Parser)]
#[command(
    name = "finsler-lab",
    version,
    about = "Numerical checks of sharp inequalities on Finsler model spaces"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config's `output`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed (overrides the config's `seed`).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// List experiments, their required config keys and what they verify.
    List,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::List => {
            print!("{}", listing());
            ExitCode::SUCCESS
        }
        Command::Run { config, out, seed } => match run(config, out, seed) {
            Ok(true) => ExitCode::SUCCESS,
            Ok(false) => ExitCode::from(2),
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(1)
            }
        },
    }
}

fn listing() -> String {
    let mut out = format!("{:<14} {:<44} {}\n", "experiment", "required keys", "verifies");
    for e in Experiment::ALL {
        out.push_str(&format!(
            "{:<14} {:<44} {}\n",
            e.name(),
            e.required_keys().join(", "),
            e.verifies()
        ));
    }
    out
}

fn threads() -> Result<usize> {
    match std::env::var(THREADS_VAR) {
        Err(_) => Ok(1),
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .with_context(|| format!("{THREADS_VAR}={v:?} is not a count"))?;
            anyhow::ensure!(n >= 1, "{THREADS_VAR} must be at least 1");
            Ok(n)
        }
    }
}

fn run(path: PathBuf, out: Option<PathBuf>, seed: Option<u64>) -> Result<bool> {
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let mut config = ExperimentConfig::parse(&text).with_context(|| format!("invalid config {}", path.display()))?;
    if let Some(s) = seed {
        config.seed = Some(s);
    }
    if let Some(dir) = out {
        config.output = Some(dir);
    }
    let dir = config
        .output
        .clone()
        .unwrap_or_else(|| PathBuf::from("finsler-lab-out"));
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads()?).build()?;

    let started = Instant::now();
    let outcome = pool.install(|| experiments::run(&config))?;
    let wall_time_s = started.elapsed().as_secs_f64();

    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut artifacts = Vec::new();
    for series in &outcome.series {
        write_atomic(&dir.join(&series.file), series.to_csv().as_bytes())?;
        artifacts.push(series.file.clone());
    }
    artifacts.push("report.json".to_string());
    let pass = outcome.checks.iter().all(|c| c.pass);
    for c in &outcome.checks {
        println!(
            "{} {:<30} {:>24.16e} (tolerance {:e})",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.tolerance
        );
    }
    let report = RunReport {
        schema: REPORT_SCHEMA,
        config: config.echo(),
        checks: outcome.checks,
        pass,
        artifacts,
        timing: Timing {
            finished_unix_s: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            wall_time_s,
        },
    };
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    write_atomic(&dir.join("report.json"), json.as_bytes())?;
    println!(
        "{} {} -> {}",
        if pass { "pass" } else { "FAIL" },
        config.experiment,
        dir.display()
    );
    Ok(pass)
}
