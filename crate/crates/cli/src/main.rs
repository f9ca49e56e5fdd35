use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod run;
mod serve;

#[derive(Parser)]
#[command(name = "utcb", version, about = "Run phone trusted-path simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario script headless and write trace, ledger and audit reports.
    Run {
        script: PathBuf,
        /// Report directory.
        #[arg(long, default_value = "utcb-out")]
        out: PathBuf,
        /// Override the script's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Treat warnings (user steps that did nothing, unknown app
        /// commands) as failures.
        #[arg(long)]
        strict: bool,
    },
    /// Serve a live simulation to the phone UI over a websocket.
    Serve {
        #[arg(long, default_value_t = 8765)]
        port: u16,
        /// Script to load; defaults to the two-phone messaging demo.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Virtual milliseconds per real millisecond.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run {
            script,
            out,
            seed,
            strict,
        } => run::run(&script, &out, seed, strict),
        Command::Serve {
            port,
            scenario,
            speed,
        } => serve::serve(port, scenario.as_deref(), speed),
    };
    ExitCode::from(code)
}
