//! `mcc` — train and probe shallow domain-adaptation models built around a
//! class-confusion objective.
//!
//! Exit codes: 0 on success, 1 for configuration or usage errors, 2 when
//! `verify` finds a failing check.

mod boundary;
mod commands;
mod config;
mod error;
mod manifest;
mod report_io;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use commands::GlobalOpts;

#[derive(Parser)]
#[command(
    name = "mcc",
    version,
    about = "Domain-adaptation trainer with a class-confusion objective",
    after_help = after_help()
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Override the run seed (for `train` on a manifest this reseeds only
    /// the training streams; the datasets stay pinned).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default: runs/<name> under the working directory,
    /// or under $MCC_OUT_ROOT when set).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Suppress per-run progress lines.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run from a config file (or replay a manifest).
    Train {
        /// Path to a run config or a previously written manifest.json.
        config: PathBuf,
    },
    /// Train every combination of the given grid values and rank them.
    Sweep {
        /// Path to the base run config.
        config: PathBuf,
        /// Grid axis as key=v1,v2,... (repeatable; keys combine as a
        /// cartesian product).
        #[arg(long = "grid", required = true)]
        grid: Vec<String>,
    },
    /// Run the built-in self-checks (oracle equivalence, gradients, anchors).
    Verify,
    /// Export a decision-boundary grid from a saved checkpoint.
    Boundary {
        /// Path to a checkpoint.json written by `train`.
        checkpoint: PathBuf,
        /// Grid resolution per axis (the CSV has grid-res^2 rows).
        #[arg(long = "grid-res", default_value_t = 101)]
        grid_res: usize,
        /// Plot window as xmin,xmax,ymin,ymax (default -3,3,-3,3).
        #[arg(long, allow_hyphen_values = true)]
        bounds: Option<String>,
    },
    /// Train the loss-component ladder (cc, cc+pr, cc+pr+ur, full).
    Ablate {
        /// Path to the base run config (method must be mcc or unset).
        config: PathBuf,
    },
}

fn after_help() -> String {
    let d = mcc::trainer::TrainConfig::default();
    format!(
        "Scenario presets: {}\n\
         Config defaults: iterations {}, batch size {}, learning rate {}, momentum {}, \
         temperature {}, adapt weight {}, hidden dim {}\n\
         Set {} to relocate default output directories.",
        config::PRESET_NAMES.join(", "),
        d.iterations,
        d.batch_size,
        d.learning_rate,
        d.momentum,
        d.temperature,
        d.adapt_weight,
        d.hidden_dim,
        commands::OUT_ROOT_ENV,
    )
}

fn run(cli: Cli) -> error::Result<()> {
    let opts = GlobalOpts {
        seed: cli.global.seed,
        out: cli.global.out,
        quiet: cli.global.quiet,
    };
    match cli.command {
        Command::Train { config } => commands::cmd_train(&config, &opts),
        Command::Sweep { config, grid } => commands::cmd_sweep(&config, &grid, &opts),
        Command::Verify => verify::run_all(opts.quiet),
        Command::Boundary {
            checkpoint,
            grid_res,
            bounds,
        } => commands::cmd_boundary(&checkpoint, grid_res, bounds.as_deref(), &opts),
        Command::Ablate { config } => commands::cmd_ablate(&config, &opts),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version requests are successful exits; everything
            // else is a usage error and shares the config-error code.
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            // clap routes help to stdout and errors to stderr.
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
