use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use inls_cli::{evolve, ground_state, verify, CliError, Invocation, RunConfig};

/// Ground states, evolutions and acceptance checks for the L²-critical NLS
/// with an inverse-square potential.
#[derive(Debug, Parser)]
#[command(name = "inls", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (overrides `out` in the config).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Random seed (overrides `seed` in the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Comma-separated criterion ids, names or groups (verify only).
    #[arg(long, global = true, value_name = "NAME")]
    only: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve for Q with both methods and write `ground_state.{csv,json}`.
    GroundState,
    /// Integrate from the configured initial data.
    Evolve,
    /// Run the acceptance suite and write `verify.json`.
    Verify,
}

/// Caps the worker pool; unset means one worker per core.
const WORKERS_ENV: &str = "INLS_WORKERS";

fn setup_workers() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("{WORKERS_ENV} = {raw:?} must be a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot size worker pool: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    setup_workers()?;
    let mut config = match &cli.config {
        Some(path) => {
            let mut c = RunConfig::load(path)?;
            c.resolve_paths(path.parent().unwrap_or_else(|| std::path::Path::new(".")));
            c
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = cli.out {
        config.out = Some(out);
    }
    if cli.only.is_some() && !matches!(cli.command, Command::Verify) {
        return Err(CliError::Usage("--only applies to the verify command".into()));
    }
    let out = config.out.clone().unwrap_or_else(|| PathBuf::from("inls-out"));
    let inv = Invocation { config, out, only: cli.only };
    match cli.command {
        Command::GroundState => ground_state::run(&inv),
        Command::Evolve => evolve::run(&inv),
        Command::Verify => verify::run(&inv),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("inls: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
