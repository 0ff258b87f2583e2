use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use polypseg_cli::commands::{cmd_eval, cmd_gradcheck, cmd_report, cmd_sfs, cmd_synth, cmd_train};
use polypseg_cli::{init_threads, CliResult, Overrides};

/// FCN polyp segmentation, shape-from-shading depth and evaluation.
///
/// Exit codes: 0 ok, 2 config, 3 data, 4 divergence, 5 check failure.
/// POLYP_THREADS sets the worker thread count.
#[derive(Parser)]
#[command(name = "polypseg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a segmenter; writes checkpoints, loss.csv and loss.png.
    Train {
        #[command(flatten)]
        o: Overrides,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint; writes per-image CSV, summary and panels.
    Eval {
        #[command(flatten)]
        o: Overrides,
    },
    /// Recover depth maps from shading.
    Sfs {
        #[command(flatten)]
        o: Overrides,
    },
    /// Finite-difference check of every layer kind and a toy FCN.
    Gradcheck {
        #[command(flatten)]
        o: Overrides,
        /// Negate analytic gradients; the suite must then fail.
        #[arg(long, hide = true)]
        inject_sign_flip: bool,
    },
    /// Summarize run directories and redraw their loss figures.
    Report {
        #[command(flatten)]
        o: Overrides,
        runs: Vec<PathBuf>,
    },
    /// Write the synthetic polyp corpus to disk.
    Synth {
        #[command(flatten)]
        o: Overrides,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    init_threads()?;
    match cli.command {
        Command::Train { o, resume } => {
            let s = cmd_train(&o.resolve()?, resume.as_deref())?;
            println!("trained to iteration {}; checkpoint {}", s.iteration, s.checkpoint.display());
        }
        Command::Eval { o } => {
            cmd_eval(&o.resolve()?)?;
        }
        Command::Sfs { o } => {
            cmd_sfs(&o.resolve()?)?;
        }
        Command::Gradcheck { o, inject_sign_flip } => {
            cmd_gradcheck(&o.resolve()?, inject_sign_flip)?;
        }
        Command::Report { o, runs } => {
            cmd_report(&o.resolve()?, &runs)?;
        }
        Command::Synth { o } => {
            cmd_synth(&o.resolve()?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("polypseg: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
