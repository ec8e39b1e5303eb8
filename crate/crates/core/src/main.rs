use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tornado_sim::cli::{self, CliConfig, Command};

/// Deterministic simulator of federated learning over star/ring
/// architectures with consensus and pluralistic grouping.
#[derive(Parser)]
#[command(name = "tornado", version, about)]
struct Cli {
    /// Config file of `section.key = value` lines
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory for all artifacts
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Master seed; every random draw derives from it
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// KEY=VALUE override applied after the config file (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[command(subcommand)]
    command: CliCommand,
}

#[derive(Subcommand)]
enum CliCommand {
    /// Generate the synthetic dataset and export it as JSON
    GenData,
    /// Run the configured grouping scheme and export the assignment
    Group,
    /// Train one architecture (or the centralized reference)
    Run {
        /// star | ring | star-stars | star-rings | ring-stars |
        /// ring-rings | stars | rings | centralized
        #[arg(long)]
        arch: String,
        /// Override the node count
        #[arg(long)]
        nodes: Option<usize>,
        /// Also write the step schedule as JSON lines
        #[arg(long)]
        dump_schedule: bool,
    },
    /// Run the full preset comparison
    Compare,
    /// Run the communication scalability sweep
    Sweep,
    /// Estimate divergences, smoothness, and drift bounds
    Diagnose,
}

fn main() -> ExitCode {
    let parsed = match Cli::try_parse() {
        Ok(parsed) => parsed,
        Err(err) => {
            // help/version requests are not usage errors
            if err.use_stderr() {
                let _ = err.print();
                return ExitCode::from(1);
            }
            let _ = err.print();
            return ExitCode::SUCCESS;
        }
    };

    let command = match parsed.command {
        CliCommand::GenData => Command::GenData,
        CliCommand::Group => Command::Group,
        CliCommand::Run {
            arch,
            nodes,
            dump_schedule,
        } => Command::Run {
            arch,
            nodes,
            dump_schedule,
        },
        CliCommand::Compare => Command::Compare,
        CliCommand::Sweep => Command::Sweep,
        CliCommand::Diagnose => Command::Diagnose,
    };

    let config = CliConfig {
        command,
        config_path: parsed.config,
        overrides: parsed.set,
        out_dir: parsed.out,
        seed: parsed.seed,
    };
    ExitCode::from(cli::dispatch(&config) as u8)
}
