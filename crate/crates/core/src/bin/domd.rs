//! Command-line front end: single runs, Monte Carlo sweeps and bound
//! verification. Exit status is 0 on success, 2 when a bound is violated and
//! 1 for configuration or other errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use domd::harness::{self, ExperimentConfig, HarnessError};

#[derive(Parser)]
#[command(name = "domd", version, about = "Decentralized online mirror descent with dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one replicate of a configured experiment and write its CSV artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Master seed; overrides the config value.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to the config's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Average normalized dynamic regret over replicates for several values of one key.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Dotted config key, e.g. `noise.sigma_v2`.
        #[arg(long)]
        param: String,
        /// Comma-separated numeric values.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<f64>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check every bound on the synthetic verification suite.
    VerifyBounds {
        #[arg(long, default_value_t = 20)]
        seeds: usize,
        #[arg(long)]
        out: PathBuf,
        /// Multiplier on the declared Lipschitz constants (values below 1
        /// sabotage the bounds).
        #[arg(long, default_value_t = 1.0)]
        l_scale: f64,
    },
}

enum Failure {
    Violation(String),
    Error(HarnessError),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        Self::Error(e)
    }
}

fn load(config: &Path, seed: Option<u64>, runs: Option<usize>) -> Result<ExperimentConfig, HarnessError> {
    let mut c = harness::load_config(config)?;
    if let Some(s) = seed {
        if s > i64::MAX as u64 {
            return Err(HarnessError::Range { key: "seed".into(), msg: "must fit in a signed 64-bit integer".into() });
        }
        c.seed = s;
    }
    if let Some(r) = runs {
        c.set_numeric("runs", r as f64)?;
    }
    Ok(c)
}

fn out_dir(out: Option<PathBuf>, config: &ExperimentConfig) -> Result<PathBuf, HarnessError> {
    out.or_else(|| config.output_dir.as_ref().map(PathBuf::from))
        .ok_or_else(|| HarnessError::Config("no output directory: pass --out or set output_dir".into()))
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { config, seed, out } => {
            let c = load(&config, seed, None)?;
            let dir = out_dir(out, &c)?;
            let result = harness::run_experiment(&c)?;
            harness::write_files(&dir, &result.files)?;
            println!(
                "dynamic regret {:.6e} (normalized {:.6e}), C_T {:.6e}",
                result.regret.dynamic,
                result.regret.normalized.last().copied().unwrap_or(0.0),
                result.regret.c_t
            );
            if let Some(bound) = result.regret_bound() {
                println!("regret bound {bound:.6e}");
            }
            println!("wrote {}", dir.display());
        }
        Command::Sweep { config, param, values, runs, seed, out } => {
            let c = load(&config, seed, runs)?;
            let dir = out_dir(out, &c)?;
            let result = harness::sweep(&c, &param, &values)?;
            harness::write_files(
                &dir,
                &[
                    ("sweep.csv".to_string(), result.to_csv().as_str().to_string()),
                    ("sweep_summary.csv".to_string(), result.summary_csv().as_str().to_string()),
                ],
            )?;
            for (v, m) in result.values.iter().zip(result.final_means()) {
                println!("{param} = {v}: mean normalized regret {m:.6e}");
            }
            println!("wrote {}", dir.display());
        }
        Command::VerifyBounds { seeds, out, l_scale } => {
            if !(l_scale > 0.0 && l_scale.is_finite()) {
                return Err(HarnessError::Range { key: "l-scale".into(), msg: "must be positive".into() }.into());
            }
            let report = harness::verify_bounds(seeds, l_scale)?;
            harness::write_files(&out, &[("verify.csv".to_string(), report.to_csv().as_str().to_string())])?;
            let checks = report.outcomes.len() + report.means.len();
            println!("{} runs, {} violations, wrote {}", checks, report.violations(), out.display());
            if !report.passed() {
                return Err(Failure::Violation(format!("{} bound violations", report.violations())));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Violation(msg)) => {
            eprintln!("domd: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Error(e)) => {
            eprintln!("domd: {e}");
            ExitCode::from(1)
        }
    }
}
