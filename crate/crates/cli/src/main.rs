use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mexp_cli::commands::{run_check, run_estimate, run_generate, run_iv, run_simulate, write_rows};
use mexp_cli::{CliError, CliResult, Overrides, RunConfig};
use mexp_core::simgen::Family;

#[derive(Parser)]
#[command(name = "mexp", version, about = "One-step estimation with a missing-at-random exposure")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; flags below override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Input CSV.
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    /// Number of cross-fitting folds.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Clipping constant for propensities.
    #[arg(long, global = true)]
    eps: Option<f64>,
    /// Interval level is 1 - alpha.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Guard on the first-stage contrast for `iv`.
    #[arg(long, global = true)]
    delta: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Report path; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Per-replicate CSV for `simulate`; defaults to the report path with a .csv extension.
    #[arg(long, global = true)]
    table: Option<PathBuf>,
    /// Replicates per sample size for `simulate`.
    #[arg(long, global = true)]
    reps: Option<usize>,
    /// Comma-separated sample sizes for `simulate`.
    #[arg(long, global = true, value_delimiter = ',')]
    n_grid: Option<Vec<usize>>,
    /// Learner for every nuisance: logistic, kernel, oracle or constant.
    #[arg(long, global = true)]
    learner: Option<String>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Cross-fitted one-step estimates of every level mean and contrast.
    Estimate,
    /// Local average treatment effect with a missing-at-random instrument.
    Iv,
    /// Monte Carlo study on a synthetic design.
    Simulate,
    /// Exact enumeration checks on randomized finite laws.
    CheckExpansion,
    /// Write a synthetic sample as CSV.
    Generate {
        /// discrete_reference, iv_reference, dag_a or dag_b; defaults to the configured design.
        #[arg(long)]
        design: Option<String>,
        #[arg(long)]
        n: usize,
    },
}

fn write_report(text: &str, out: Option<&Path>) -> CliResult<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::io(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn parse_design(name: &str) -> CliResult<Family> {
    serde_json::from_value(serde_json::json!({ "name": name }))
        .map_err(|e| CliError::Config(format!("unknown design `{name}`: {e}")))
}

fn run(cli: Cli) -> CliResult<ExitCode> {
    let c = cli.common;
    if let Some(t) = c.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let overrides = Overrides {
        input: c.input,
        k: c.k,
        eps: c.eps,
        alpha: c.alpha,
        delta: c.delta,
        seed: c.seed,
        out: c.out,
        table: c.table,
        reps: c.reps,
        n_grid: c.n_grid,
        learner: c.learner,
    };
    let cfg = RunConfig::load(c.config.as_deref(), &overrides)?;
    let out = cfg.out.as_deref();
    match cli.command {
        Command::Estimate => write_report(&run_estimate(&cfg)?, out)?,
        Command::Iv => {
            let (text, weak) = run_iv(&cfg)?;
            if weak {
                eprintln!("mexp: warning: weak first stage; the interval may be unreliable");
            }
            write_report(&text, out)?;
        }
        Command::Simulate => {
            let (text, rows) = run_simulate(&cfg)?;
            write_report(&text, out)?;
            if let Some(p) = cfg.table_path() {
                let file = std::fs::File::create(&p).map_err(|e| CliError::io(&p, e))?;
                write_rows(&rows, std::io::BufWriter::new(file))?;
            }
        }
        Command::CheckExpansion => {
            let (text, passed) = run_check(&cfg)?;
            write_report(&text, out)?;
            if !passed {
                return Err(CliError::CheckFailed("a residual exceeds the tolerance; see the report".into()));
            }
        }
        Command::Generate { design, n } => {
            let family = match design {
                Some(name) => parse_design(&name)?,
                None => cfg.simulation.design.clone(),
            };
            run_generate(&cfg, &family, n, out)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("mexp: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
