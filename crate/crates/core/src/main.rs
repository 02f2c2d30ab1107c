use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use xbar_sim::cli::{self, Command, RunOptions};

#[derive(Parser)]
#[command(name = "xbar-sim", version, about = "Memristive crossbar inference simulator")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, env = "XBARSIM_JOBS", default_value_t = 0)]
    jobs: usize,
    /// Saved weights to use instead of training.
    #[arg(long)]
    weights: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Program crossbars for the network and save their state.
    Program(Common),
    /// Accuracy and output-deviation metrics of crossbar-backed inference.
    Infer {
        #[command(flatten)]
        common: Common,
        /// Saved crossbar state to read instead of programming fresh arrays.
        #[arg(long)]
        crossbar: Option<PathBuf>,
    },
    /// Repeat `infer` at every value of the config's sweep axis.
    Sweep(Common),
    /// Train the network and save its weights.
    Train(Common),
    /// Device preset table and stuck-cell compensation records.
    Report(Common),
    /// Check a config and print every problem found.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let args = Cli::parse();
    let (cmd, common, crossbar) = match args.command {
        Cmd::Validate { config } => return validate(&config),
        Cmd::Program(c) => (Command::Program, c, None),
        Cmd::Infer { common, crossbar } => (Command::Infer, common, crossbar),
        Cmd::Sweep(c) => (Command::Sweep, c, None),
        Cmd::Train(c) => (Command::Train, c, None),
        Cmd::Report(c) => (Command::Report, c, None),
    };
    let opts = RunOptions {
        config: common.config,
        out: common.out,
        seed: common.seed,
        jobs: common.jobs,
        weights: common.weights,
        crossbar,
    };
    match cli::run(cmd, &opts) {
        Ok(summary) => {
            for f in &summary.files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e @ xbar_sim::Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn validate(path: &std::path::Path) -> ExitCode {
    match cli::validate(path) {
        Ok(diags) if diags.is_empty() => {
            println!("{}: ok", path.display());
            ExitCode::SUCCESS
        }
        Ok(diags) => {
            for d in &diags {
                eprintln!("{}: {d}", path.display());
            }
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
