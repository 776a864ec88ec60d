//! `milab` — generate synthetic bag datasets, train MIL models in joint or
//! additive composition, evaluate them, emit heatmaps, and verify the
//! Shapley equivalence of additive contributions by exact enumeration.
//!
//! Exit codes: 0 success, 1 internal error or failed verification,
//! 2 config/IO error, 3 unsupported model composition.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use milab::cli;
use milab::error::Result;

#[derive(Parser)]
#[command(name = "milab", version, about = "Multiple-instance-learning laboratory")]
struct MilabArgs {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config file for the command
    #[arg(long)]
    config: PathBuf,
    /// Output directory (must exist)
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Override the seed inside the config
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic slide dataset with planted ground truth
    Gen(Common),
    /// Train a MIL model on a generated dataset
    Train(Common),
    /// Evaluate a checkpoint: accuracy, AUROC, heatmap PR, linearity
    Eval(Common),
    /// Emit per-class heatmap PGMs and a contributions CSV for one slide
    Explain(Common),
    /// Enumerate Shapley values on sub-bags and check the closed form
    VerifyShapley(Common),
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Gen(args) => {
            let config = cli::load_config(&args.config)?;
            println!("{}", cli::cmd_gen(config, &args.out, args.seed)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Train(args) => {
            let config = cli::load_config(&args.config)?;
            println!("{}", cli::cmd_train(config, &args.out, args.seed)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval(args) => {
            let config = cli::load_config(&args.config)?;
            println!("{}", cli::cmd_eval(config, &args.out, args.seed)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Explain(args) => {
            let config = cli::load_config(&args.config)?;
            println!("{}", cli::cmd_explain(config, &args.out, args.seed)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::VerifyShapley(args) => {
            let config = cli::load_config(&args.config)?;
            let outcome = cli::cmd_verify_shapley(config, &args.out, args.seed)?;
            println!("{}", outcome.summary);
            Ok(if outcome.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
    }
}

fn main() -> ExitCode {
    let args = MilabArgs::parse();
    match run(args.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(cli::exit_code(&err) as u8)
        }
    }
}
