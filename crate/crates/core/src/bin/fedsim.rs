use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedsim::cli;

#[derive(Parser)]
#[command(name = "fedsim", version, about = "Federated learning pattern simulator")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write metrics.jsonl, coversion.log and summary.json.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse and validate a scenario without running it.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Compare finished runs side by side.
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        /// Also write the comparison as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// List the local models behind a global model version.
    Lineage {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        version: u64,
    },
}

fn main() -> ExitCode {
    cli::init_logging();
    match dispatch(Args::parse().command) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("fedsim: {e}");
            ExitCode::from(e.code)
        }
    }
}

fn dispatch(command: Command) -> Result<String, cli::CliError> {
    match command {
        Command::Run { scenario, seed, out } => {
            let output = cli::cmd_run(&scenario, seed, &out)?;
            let s = &output.summary;
            Ok(format!(
                "{} rounds, final loss {:.6}, {} bytes up, {} bytes down -> {}\n",
                s.rounds_run,
                s.final_loss,
                s.total_bytes_up,
                s.total_bytes_down,
                out.display()
            ))
        }
        Command::Validate { scenario } => {
            let s = cli::cmd_validate(&scenario)?;
            Ok(format!("ok: {} clients, {} rounds, {} aggregator\n", s.data.n_clients, s.rounds, s.aggregator.name()))
        }
        Command::Compare { runs, json } => {
            let comparison = cli::cmd_compare(&runs)?;
            if let Some(path) = json {
                cli::write_atomic(&path, comparison.to_json().as_bytes())
                    .map_err(|e| cli::CliError { code: cli::EXIT_RUNTIME, message: e.to_string() })?;
            }
            Ok(comparison.render_table())
        }
        Command::Lineage { out, version } => Ok(cli::render_lineage(&cli::cmd_lineage(&out, version)?)),
    }
}
