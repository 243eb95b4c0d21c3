use std::path::PathBuf;
use std::process::ExitCode;

use abcem::experiments::ExperimentKind;
use abcem_cli::{config_to_json, preset_config, run_file, CliError, PRESETS};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "abcem", version, about = "LLS and FW market model experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Output directory (defaults to the config's "out", then out/<experiment>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the expanded config of a preset.
    Preset { name: String },
    /// List experiment kinds and presets.
    List,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, out } => {
            for path in run_file(&config, out.as_deref())? {
                println!("{}", path.display());
            }
        }
        Command::Preset { name } => println!("{}", config_to_json(&preset_config(&name)?)),
        Command::List => {
            println!("experiments:");
            for kind in ExperimentKind::ALL {
                println!("  {}", kind.name());
            }
            println!("presets:");
            for p in PRESETS {
                println!("  {p}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("abcem: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
