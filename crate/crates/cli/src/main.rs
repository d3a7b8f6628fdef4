use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use perturbvar_cli::{execute, Command, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "perturbvar", version)]
#[command(about = "Training-free uncertainty maps from inference-time perturbations")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write variance, mean and prediction maps for every input
    Estimate(RunArgs),
    /// Score uncertainty maps against ground truth
    Evaluate(RunArgs),
    /// Tolerability and correlation over a grid of taps and strengths
    Sweep(RunArgs),
    /// Empirical tail vs performance bound at selected pixels
    Bound(RunArgs),
    /// Estimate, evaluate and bound in one run
    Report(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// JSON run configuration
    #[arg(long)]
    config: PathBuf,

    /// Override a config value, e.g. `--set sweep.rates=[0.1,0.2]`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Output directory (overrides `output_dir`)
    #[arg(long)]
    out: Option<PathBuf>,

    /// Master seed (overrides `seed`)
    #[arg(long)]
    seed: Option<u64>,

    /// Worker threads (overrides `threads`)
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, args) = match cli.command {
        Cmd::Estimate(a) => (Command::Estimate, a),
        Cmd::Evaluate(a) => (Command::Evaluate, a),
        Cmd::Sweep(a) => (Command::Sweep, a),
        Cmd::Bound(a) => (Command::Bound, a),
        Cmd::Report(a) => (Command::Report, a),
    };
    let overrides = Overrides {
        set: args.set,
        out: args.out,
        seed: args.seed,
        threads: args.threads,
    };
    let result = RunConfig::load(&args.config, &overrides).and_then(|cfg| {
        let written = execute(cmd, &cfg)?;
        Ok((cfg, written))
    });
    match result {
        Ok((cfg, written)) => {
            for path in written {
                println!("{}", cfg.output_dir.join(path).display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
