use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use dosebo_cli::service;
use dosebo_cli::simulate::{simulate, SimulateArgs};
use dosebo_cli::store::Store;

#[derive(Parser)]
#[command(name = "dosebo", version, about = "Bayesian-optimization dose finding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation study and write metrics.csv and manifest.json.
    Simulate {
        /// Scenario name; repeat or comma-separate for several.
        #[arg(long, required = true, value_delimiter = ',')]
        scenario: Vec<String>,
        #[arg(long, required = true, value_delimiter = ',')]
        design: Vec<String>,
        /// Replicates per scenario and design.
        #[arg(long, default_value_t = 100)]
        m: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Worker threads, 0 for all cores.
        #[arg(long, default_value_t = 0)]
        threads: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Exit successfully even when some replicates failed.
        #[arg(long)]
        allow_partial: bool,
        /// Scenario/design catalogue; the bundled one when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Host interactive trials over HTTP.
    Serve {
        #[arg(long, env = "DOSEBO_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, env = "DOSEBO_STATE_DIR", default_value = "state")]
        state_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Simulate {
            scenario,
            design,
            m,
            seed,
            threads,
            out,
            allow_partial,
            config,
        } => {
            let args = SimulateArgs {
                config,
                scenarios: scenario,
                designs: design,
                replicates: m,
                seed,
                threads,
                out,
                allow_partial,
            };
            match simulate(&args) {
                Ok(o) => {
                    eprintln!(
                        "wrote {} rows to {} ({} failed replicates)",
                        o.rows.len(),
                        args.out.display(),
                        o.failure_count()
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            }
        }
        Command::Serve { port, state_dir } => {
            let store = match Store::open(&state_dir) {
                Ok(s) => Arc::new(s),
                Err(e) => {
                    eprintln!("error: {}: {e}", state_dir.display());
                    return ExitCode::FAILURE;
                }
            };
            for id in store.ids() {
                if let Ok(entry) = store.get(&id) {
                    if let Some(why) = &entry.lock().unwrap_or_else(|p| p.into_inner()).read_only {
                        eprintln!("warning: trial {id} is read-only: {why}");
                    }
                }
            }
            let rt = match tokio::runtime::Runtime::new() {
                Ok(rt) => rt,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::FAILURE;
                }
            };
            eprintln!("listening on port {port}, state in {}", state_dir.display());
            match rt.block_on(service::serve(store, port)) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            }
        }
    }
}
