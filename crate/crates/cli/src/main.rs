mod fixtures;
mod flops;
mod net;
mod perf;
mod train;
mod verify;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "hybridcnn",
    version,
    about = "Hybrid data and spatial parallel training of 3D CNNs on simulated ranks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compare a distributed pass against the serial oracle, layer by layer.
    Verify(verify::Args),
    /// Train on a dataset (or a synthetic one) and write per-epoch losses.
    Train(train::Args),
    /// Print conv flops, parameters and activation memory per sample.
    Flops(flops::Args),
    /// Evaluate the iteration-time model and write its breakdown.
    Perf(perf::Args),
    /// Write a synthetic dataset of sample files and a manifest.
    MakeFixtures(fixtures::Args),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Verify(a) => verify::run(a),
        Command::Train(a) => train::run(a),
        Command::Flops(a) => flops::run(a),
        Command::Perf(a) => perf::run(a),
        Command::MakeFixtures(a) => fixtures::run(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
