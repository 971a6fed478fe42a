//! `critesn`: reproduce the critical-ESN experiments and run the verifiers.
//!
//! Exit codes: 0 all checks passed, 1 a check failed, 2 usage or config
//! error, 3 any other runtime or I/O error.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use crate::config::{ExperimentConfig, UsageError};

#[derive(Parser, Debug)]
#[command(version, about = "Echo state networks at the edge of chaos")]
struct Cli {
    /// JSON config file; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for parallel sweeps (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Lyapunov exponent of the alternating neuron over a grid of b.
    Figure3,
    /// Perturbation traces under alternating and i.i.d. input, with decay fits.
    Figure45,
    /// Cover inequality, dominance, φ monotonicity and step audits.
    Verify,
    /// Critical coupling of the alternating neuron.
    CriticalB,
    /// Memory capacity for several reservoir sizes.
    Mc,
    /// Run one reservoir and write its trajectory.
    Simulate,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Figure3 => "figure3",
            Command::Figure45 => "figure45",
            Command::Verify => "verify",
            Command::CriticalB => "critical-b",
            Command::Mc => "mc",
            Command::Simulate => "simulate",
        }
    }
}

fn execute(cli: &Cli) -> Result<bool> {
    let mut cfg: ExperimentConfig = config::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(UsageError("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()?;
    }
    std::fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    commands::write_json(&cli.out, "config.resolved.json", &cfg)?;
    write_meta(cli, &cfg, &cli.out)?;

    let out = cli.out.as_path();
    match cli.command {
        Command::Figure3 => commands::figure3(&cfg, out),
        Command::Figure45 => commands::figure45(&cfg, out),
        Command::Verify => commands::verify(&cfg, out),
        Command::CriticalB => commands::critical_b(&cfg, out),
        Command::Mc => commands::mc(&cfg, out),
        Command::Simulate => commands::simulate(&cfg, out),
    }
}

fn write_meta(cli: &Cli, cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let started = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let meta = json!({
        "command": cli.command.name(),
        "experiment": cfg.experiment,
        "version": env!("CARGO_PKG_VERSION"),
        "started_unix": started,
        "config_path": cli.config,
        "threads": rayon::current_num_threads(),
    });
    commands::write_json(out, "run_meta.json", &meta)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("{}: one or more checks failed", cli.command.name());
            ExitCode::from(1)
        }
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}
