use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ctcbench_cli::commands::{
    AblateArgs, CompareArgs, InitArgs, ReportArgs, SplitArgs, StatsArgs, SynthArgs, TrainArgs,
};

/// Bright-field CTC classification benchmark.
#[derive(Parser)]
#[command(name = "ctcbench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with paired BF/DAPI images.
    Synth(SynthArgs),
    /// Partition a manifest and print the per-class count table.
    Split(SplitArgs),
    /// Train and evaluate one arm over every configured seed.
    Train(TrainArgs),
    /// Run the ablation arms and write the arm table and F1 vectors.
    Ablate(AblateArgs),
    /// Compare backbones on the configured arm.
    Compare(CompareArgs),
    /// Levene / Shapiro-Wilk / t or Mann-Whitney decision on two F1 vectors.
    Stats(StatsArgs),
    /// Rebuild report tables from persisted per-seed records.
    Report(ReportArgs),
    /// Write a config file listing every key with its default.
    Init(InitArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(a) => ctcbench_cli::cmd_synth(a),
        Command::Split(a) => ctcbench_cli::cmd_split(a),
        Command::Train(a) => ctcbench_cli::cmd_train(a),
        Command::Ablate(a) => ctcbench_cli::cmd_ablate(a),
        Command::Compare(a) => ctcbench_cli::cmd_compare(a),
        Command::Stats(a) => ctcbench_cli::cmd_stats(a),
        Command::Report(a) => ctcbench_cli::cmd_report(a),
        Command::Init(a) => ctcbench_cli::cmd_init(a),
    };
    match result {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let mut msg = format!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                msg.push_str(&format!("\n  caused by: {s}"));
                src = s.source();
            }
            eprintln!("{msg}");
            ExitCode::FAILURE
        }
    }
}
