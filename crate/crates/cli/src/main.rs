//! `mdtail`: tail bounds, simulation and certification from a TOML config.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{Overrides, RunConfig};
use crate::error::CliError;
use crate::output::Writer;

#[derive(Parser)]
#[command(name = "mdtail", version, about = "Uniform tail bounds for normalized sums with moderate tails")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed; overrides plan.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides output.dir.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Cap on simulated draws; overrides plan.budget.
    #[arg(long, global = true)]
    budget: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form, Fenchel and lower-witness curves on the level grid.
    Bound,
    /// Empirical tail of the normalized sum (or field supremum).
    Simulate {
        #[arg(long)]
        field: bool,
        /// Also write this many field paths for the largest n.
        #[arg(long, value_name = "N")]
        dump_paths: Option<usize>,
    },
    /// Simulate and check every bound against the empirical tail.
    Certify {
        #[arg(long)]
        field: bool,
    },
    /// Confidence radius for a Monte Carlo mean.
    Confidence,
    /// Entropy condition, entropic integral and uniform field bound.
    Entropy,
    /// Moments from the tail and the θ equivalence table.
    Moments,
    /// Young–Fenchel transform of ln θ.
    Fenchel,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    let path = cli.config.ok_or_else(|| CliError::Config("--config PATH is required".into()))?;
    let overrides = Overrides { seed: cli.seed, out: cli.out, budget: cli.budget };
    let cfg = RunConfig::load(&path, &overrides)?;
    let mut out = Writer::new(&cfg)?;
    let result = match cli.command {
        Command::Bound => commands::bound(&cfg, &mut out),
        Command::Simulate { field, dump_paths } => commands::simulate_cmd(&cfg, &mut out, field, dump_paths),
        Command::Certify { field } => commands::certify_cmd(&cfg, &mut out, field),
        Command::Confidence => commands::confidence(&cfg, &mut out),
        Command::Entropy => commands::entropy(&cfg, &mut out),
        Command::Moments => commands::moments(&cfg, &mut out),
        Command::Fenchel => commands::fenchel(&cfg, &mut out),
    };
    for p in &out.written {
        println!("{}", p.display());
    }
    result
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mdtail: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
