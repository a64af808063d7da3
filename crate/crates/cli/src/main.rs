use clap::{Parser, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

use canvasrnn_cli::{execute, exit_code, Command};

#[derive(Clone, Copy, ValueEnum)]
enum Cmd {
    Train,
    Anytime,
    Video,
    Perturb,
    Flops,
    Psd,
    GenData,
}

/// Recurrent canvas segmentation experiments.
#[derive(Parser)]
#[command(name = "canvasrnn", version)]
struct Args {
    #[arg(value_enum)]
    command: Cmd,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let command = match args.command {
        Cmd::Train => Command::Train,
        Cmd::Anytime => Command::Anytime,
        Cmd::Video => Command::Video,
        Cmd::Perturb => Command::Perturb,
        Cmd::Flops => Command::Flops,
        Cmd::Psd => Command::Psd,
        Cmd::GenData => Command::GenData,
    };
    match execute(command, &args.config, args.seed, args.out) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("canvasrnn {}: {e}", command.name());
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
