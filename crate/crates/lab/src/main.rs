use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stochsn::commands::{execute, Command};
use stochsn::config::load;

#[derive(Parser)]
#[command(name = "stochsn", version, about = "Stochastic Schrödinger-Newton lab")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
    /// TOML config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Override a config key, e.g. --set ensemble.trajectories=100.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Sub {
    /// Derived scales and regime classification.
    Scales,
    /// Phase variance by quadrature, closed form and asymptote.
    Phasevar,
    /// One deterministic or stochastic trajectory on the radial grid.
    Evolve,
    /// Stochastic ensemble and coherence decay.
    Ensemble,
    /// Master-equation evolution on the toy grid.
    Master,
    /// Ensembles across masses or widths with a log-log fit.
    Sweep,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command = match cli.command {
        Sub::Scales => Command::Scales,
        Sub::Phasevar => Command::Phasevar,
        Sub::Evolve => Command::Evolve,
        Sub::Ensemble => Command::Ensemble,
        Sub::Master => Command::Master,
        Sub::Sweep => Command::Sweep,
    };
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    if cli.threads == Some(0) {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(2);
    }
    let result =
        load(cli.config.as_deref(), &overrides).and_then(|cfg| execute(command, &cfg, &cli.out_dir, cli.threads));
    match result {
        Ok(m) => {
            eprintln!("wrote {} files to {} ({:.2} s)", m.outputs.len() + 2, cli.out_dir.display(), m.wall_clock_s);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
