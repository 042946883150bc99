//! `roadcast` — the experiment driver. Every subcommand reads one TOML
//! config (``--config`` or ``$ROADCAST_CONFIG``) and is deterministic
//! given that config: all randomness flows from its root seed, and
//! results are bit-identical across reruns and worker counts.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 config/usage error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

use config::RunConfig;

/// A failure with its exit-code class.
#[derive(Debug)]
pub enum CliError {
    /// The user asked for something invalid (exit 2).
    Usage(String),
    /// The pipeline itself failed (exit 1).
    Runtime(String),
}

#[derive(Parser)]
#[command(
    name = "roadcast",
    version,
    about = "Low-rank cyclostationary travel-time prediction and re-routing workbench"
)]
struct Cli {
    /// Config file (TOML); defaults to $ROADCAST_CONFIG.
    #[arg(short, long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Worker threads for evaluation (0 = one per core); overrides the config.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Root seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world: graph, truth and observed matrices.
    Synth,
    /// Condition the observed matrix into a complete training matrix.
    Preprocess,
    /// Fit the spatial basis and the configured cycle models.
    Fit {
        /// Also print the MDL order-selection curve.
        #[arg(long)]
        mdl: bool,
        /// Spatial model order; overrides fit.rank.
        #[arg(long)]
        rank: Option<usize>,
    },
    /// Print the MDL curve and the selected model order.
    Mdl,
    /// Write Welch power spectra of the leading temporal modes.
    Spectra {
        /// How many modes; overrides spectra.modes.
        #[arg(long)]
        modes: Option<usize>,
    },
    /// Run the regret evaluation suite and write the result tables.
    Evaluate,
    /// Re-render the evaluation summary from stats.json.
    Report,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config_path =
        cli.config.or_else(|| std::env::var_os("ROADCAST_CONFIG").map(PathBuf::from)).ok_or_else(
            || CliError::Usage("no config file: pass --config FILE or set ROADCAST_CONFIG".into()),
        )?;
    let mut config = RunConfig::load(&config_path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(workers) = cli.workers {
        config.workers = workers;
    }
    if config.workers > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(config.workers).build_global().map_err(
            |e| CliError::Runtime(format!("configuring {} workers: {e}", config.workers)),
        )?;
    }

    match cli.command {
        Command::Synth => commands::cmd_synth(&config),
        Command::Preprocess => commands::cmd_preprocess(&config),
        Command::Fit { mdl, rank } => commands::cmd_fit(&config, mdl, rank),
        Command::Mdl => commands::cmd_mdl(&config),
        Command::Spectra { modes } => commands::cmd_spectra(&config, modes),
        Command::Evaluate => commands::cmd_evaluate(&config),
        Command::Report => commands::cmd_report(&config),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
