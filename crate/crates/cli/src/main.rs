use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use multispin_cli::{run, CommandKind, ExperimentConfig, RunOptions};

#[derive(Parser)]
#[command(name = "multispin", version, about = "Experiments on multi-species spherical mixed p-spin glasses")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads. Outputs do not depend on this.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Run the property suite and write verify.json.
    Verify,
    /// Free energies of independent instances.
    FreeEnergy,
    /// Ground-state energies on a shell.
    GroundState,
    /// TAP decomposition over a grid of overlaps.
    TapScan,
    /// Multi-replica overlap probabilities.
    Multisamp,
    /// Print the effective config as JSON.
    ShowConfig,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match &cli.config {
        Some(path) => ExperimentConfig::load(path),
        None => Ok(ExperimentConfig::default()),
    };
    let mut config = match config {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let kind = match cli.command {
        Command::Verify => CommandKind::Verify,
        Command::FreeEnergy => CommandKind::FreeEnergy,
        Command::GroundState => CommandKind::GroundState,
        Command::TapScan => CommandKind::TapScan,
        Command::Multisamp => CommandKind::Multisamp,
        Command::ShowConfig => {
            if let Some(seed) = cli.seed {
                config.master_seed = seed;
            }
            // A closed pipe (e.g. `| head`) is not an error.
            let _ = writeln!(std::io::stdout(), "{}", config.to_json_pretty());
            return ExitCode::SUCCESS;
        }
    };
    let options = RunOptions { out: cli.out, workers: cli.workers, seed: cli.seed };
    match run(kind, &config, &options) {
        Ok(output) => {
            let mut stdout = std::io::stdout().lock();
            let _ = write!(stdout, "{}", output.summary);
            for f in &output.files {
                let _ = writeln!(stdout, "wrote {}", f.display());
            }
            if output.success {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
