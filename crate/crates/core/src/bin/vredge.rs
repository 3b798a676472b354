use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use vredge::sim::commands::{partition_cmd, place_cmd, simulate_cmd, sweep_cmd, synth_traces_cmd, train_cmd};
use vredge::sim::SimConfig;

/// Edge caching and delivery scheduling for tiled VR video.
#[derive(Parser)]
#[command(version)]
struct Cli {
    /// Key-value config file; unset keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Place the catalog into the edge cache.
    Place,
    /// Split the cache across segment subsets.
    Partition,
    /// Run the configured scheduler on the test profile.
    Simulate,
    /// Train the index networks and save a checkpoint.
    Train,
    /// Run a parameter sweep: chi, channel, popularity, schedulers or x0.
    Sweep { name: String },
    /// Write synthetic training and test traces.
    SynthTraces,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut config = match &cli.config {
        Some(path) => match SimConfig::from_file(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {}: {e}", path.display());
                return ExitCode::FAILURE;
            }
        },
        None => SimConfig::default(),
    };
    if cli.seed.is_some() {
        config.seed = cli.seed;
    }
    let dir = cli.out.as_path();
    let written = match &cli.command {
        Command::Place => place_cmd(&config, dir),
        Command::Partition => partition_cmd(&config, dir),
        Command::Simulate => simulate_cmd(&config, dir),
        Command::Train => train_cmd(&config, dir),
        Command::Sweep { name } => sweep_cmd(name, &config, dir),
        Command::SynthTraces => synth_traces_cmd(&config, dir),
    };
    match written {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
