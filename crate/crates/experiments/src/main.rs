use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use threescale_experiments::commands;
use threescale_experiments::config::{ExperimentKind, LoadedConfig};

#[derive(Parser)]
#[command(name = "threescale", about = "Reduction tables, convergence sweeps, blow-up scans and norm watches")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct Io {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; one subdirectory per experiment kind is created inside.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    Reduce(Io),
    Converge(Io),
    Blowup(Io),
    Normwatch(Io),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (kind, io) = match &cli.cmd {
        Cmd::Reduce(io) => (ExperimentKind::Reduce, io),
        Cmd::Converge(io) => (ExperimentKind::Converge, io),
        Cmd::Blowup(io) => (ExperimentKind::Blowup, io),
        Cmd::Normwatch(io) => (ExperimentKind::Normwatch, io),
    };
    let result = LoadedConfig::load(&io.config).map_err(anyhow::Error::from).and_then(|cfg| {
        if cfg.config.experiment != kind {
            anyhow::bail!("{} describes a {} experiment", io.config.display(), cfg.config.experiment.dir_name());
        }
        commands::run(&cfg, &io.out)
    });
    match result {
        Ok(log) => {
            for f in &log.written {
                log::info!("wrote {}", f.display());
            }
            if log.flags.is_empty() {
                ExitCode::SUCCESS
            } else {
                for f in &log.flags {
                    eprintln!("FLAG: {f}");
                }
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
