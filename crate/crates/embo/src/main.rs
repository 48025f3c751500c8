use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use embo::{Command, RunOptions};

#[derive(Parser)]
#[command(name = "embo", version, about = "Model-based observer for hysteretic wood-frame buildings")]
struct Cli {
    #[command(subcommand)]
    command: Verb,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Output directory; overrides `outputs.directory`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Measurement-noise seed; overrides `seeds.measurement_noise`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for the gain search.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Verb {
    /// Truth response and synthetic measurements.
    Simulate(Common),
    /// Observer feedback gain.
    Gain(Common),
    /// Observer response from the measurements.
    Observe(Common),
    /// Damage indices from the estimated response.
    Damage(Common),
    /// All stages plus threshold checks.
    Verify(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common) = match cli.command {
        Verb::Simulate(c) => (Command::Simulate, c),
        Verb::Gain(c) => (Command::Gain, c),
        Verb::Observe(c) => (Command::Observe, c),
        Verb::Damage(c) => (Command::Damage, c),
        Verb::Verify(c) => (Command::Verify, c),
    };
    #[cfg(feature = "parallel")]
    if let Some(n) = common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: --threads: {e}");
            return ExitCode::from(2);
        }
    }
    let opts = RunOptions {
        out: common.out,
        seed: common.seed,
        threads: common.threads,
    };
    match embo::run(command, &common.config, &opts) {
        Ok(session) => {
            eprintln!("{} finished; outputs in {}", command.name(), session.out_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
