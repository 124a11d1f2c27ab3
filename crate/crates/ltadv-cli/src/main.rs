//! `ltadv` — adversarial training on long-tailed distributions, desk scale.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ltadv_cli::commands::{self, Invocation};
use ltadv_cli::config::{self, Mode};

#[derive(Parser)]
#[command(
    name = "ltadv",
    about = "Adversarial training and tail-error theory on long-tailed class distributions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment configuration file (flat INI; defaults apply when omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (default: runs/<mode>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Replace the seed list from the config with this single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Allow writing into a non-empty output directory.
    #[arg(long, global = true)]
    overwrite: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form tail errors vs Monte-Carlo simulation over a grid.
    Theory,
    /// Natural-vs-adversarial logistic regression on the binary mixture.
    Logistic,
    /// Phase one: adversarially train the balanced self-teacher.
    TrainTeacher,
    /// Phase two: train the student with balanced softmax + distillation.
    TrainStudent,
    /// Train and evaluate several methods over several seeds.
    Compare,
    /// Evaluate a checkpoint: clean and PGD accuracy with tail breakdown.
    Eval,
}

fn mode_of(cmd: &Command) -> Mode {
    match cmd {
        Command::Theory => Mode::Theory,
        Command::Logistic => Mode::Logistic,
        Command::TrainTeacher => Mode::TrainTeacher,
        Command::TrainStudent => Mode::TrainStudent,
        Command::Compare => Mode::Compare,
        Command::Eval => Mode::Eval,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mode = mode_of(&cli.command);

    let mut cfg = match config::load(mode, cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e:#}");
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }

    let out_dir = cli
        .out
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(mode.as_str()));
    let inv = Invocation {
        out_dir,
        overwrite: cli.overwrite,
    };

    match commands::run(&cfg, &inv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}
