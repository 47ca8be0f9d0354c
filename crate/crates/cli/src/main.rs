//! `backstep`: kernel synthesis, simulation, verification and parameter sweeps.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{CliResult, Mode, SweepParam};
use config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "backstep", version, about = "Backstepping control of an ODE / heat-equation cascade")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Spatial step.
    #[arg(long)]
    h: Option<f64>,
    /// Time step.
    #[arg(long)]
    dt: Option<f64>,
    /// Final time.
    #[arg(long = "T")]
    t_end: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Compute gains and kernels; write k1.csv, k2.csv, phi.csv and certificate.txt.
    Synthesize(Common),
    /// Simulate the open loop, closed loop or target system.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "closed")]
        mode: Mode,
    },
    /// Check stored artifacts and closed-loop behavior.
    Verify(Common),
    /// Closed-loop runs over a list of ξ or λ values.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        param: SweepParam,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<f64>,
    },
}

fn load(common: &Common) -> CliResult<(RunConfig, PathBuf)> {
    let mut cfg = RunConfig::load(&common.config)?;
    cfg.apply(Overrides { h: common.h, dt: common.dt, t_end: common.t_end });
    let out = commands::output_dir(&cfg, &common.config);
    Ok((cfg, out))
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synthesize(c) => {
            let (cfg, out) = load(&c)?;
            commands::synthesize_cmd(&cfg, &out)
        }
        Command::Simulate { common, mode } => {
            let (cfg, out) = load(&common)?;
            commands::simulate_cmd(&cfg, mode, &out)
        }
        Command::Verify(c) => {
            let (cfg, out) = load(&c)?;
            commands::verify_cmd(&cfg, &out)
        }
        Command::Sweep { common, param, values } => {
            let (cfg, out) = load(&common)?;
            commands::sweep_cmd(&cfg, param, &values, &out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
