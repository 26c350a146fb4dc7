use clap::error::ErrorKind;
use dram_cli::run;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

/// Dyadic avatar pose forecasting: synthesize conversations, train and
/// evaluate forecasting models, and verify gradients — every run is driven
/// by one TOML config and leaves a manifest sufficient to reproduce it.
#[derive(Parser)]
#[command(name = "dram", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct RunFlags {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for artifacts and the manifest.
    #[arg(long)]
    out: PathBuf,
    /// Override the config's global seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GradcheckFlags {
    /// Optional run configuration (only its seed is used).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Optional output directory for the result table and manifest.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config's global seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dyadic-conversation dataset file.
    Synth(RunFlags),
    /// Train a model and write a checkpoint plus training curves.
    Train(RunFlags),
    /// Evaluate a checkpoint: position-error table, correctness ladder,
    /// and the attention trace when the model has a gate.
    Eval(RunFlags),
    /// Finite-difference verification of every gradient path.
    Gradcheck(GradcheckFlags),
    /// Train and evaluate a variant grid; prints the comparison table.
    Experiment(RunFlags),
}

fn to_run_args(f: RunFlags) -> run::RunArgs {
    run::RunArgs { config: f.config, out: f.out, seed: f.seed }
}

fn dispatch(cli: Cli) -> dram_core::Result<i32> {
    match cli.cmd {
        Cmd::Synth(f) => run::cmd_synth(&to_run_args(f)).map(|_| 0),
        Cmd::Train(f) => run::cmd_train(&to_run_args(f)).map(|_| 0),
        Cmd::Eval(f) => run::cmd_eval(&to_run_args(f)).map(|_| 0),
        Cmd::Gradcheck(f) => {
            let args =
                run::GradcheckArgs { config: f.config, out: f.out, seed: f.seed };
            // a failed check is a runtime failure, not a usage error
            run::cmd_gradcheck(&args).map(|ok| if ok { 0 } else { 2 })
        }
        Cmd::Experiment(f) => run::cmd_experiment(&to_run_args(f)).map(|_| 0),
    }
}

fn main() {
    let code = match Cli::try_parse() {
        Ok(cli) => match dispatch(cli) {
            Ok(code) => code,
            Err(e) => {
                eprintln!("error: {e}");
                if e.is_validation() {
                    1
                } else {
                    2
                }
            }
        },
        Err(e) => {
            let kind = e.kind();
            let _ = e.print();
            if matches!(kind, ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                0
            } else {
                1
            }
        }
    };
    std::process::exit(code);
}
