use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nonlocal_sis::runner::{self, suite, ScenarioConfig};

/// Nonlocal dispersal SIS model: thresholds, equilibria and dynamics.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario described by a JSON config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full acceptance battery and write a pass/fail table.
    Suite {
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out } => ScenarioConfig::load(&config).and_then(|cfg| runner::run(&cfg, &out)),
        Command::Suite { out } => {
            let outcomes = suite::run_all(|o| println!("{}", o.line()));
            let checks = outcomes.iter().filter(|o| o.passed).count();
            println!("{checks}/{} criteria passed", outcomes.len());
            runner::write_suite(&out, &outcomes)
        }
    };
    match result {
        Ok(record) => {
            for c in record.checks.iter().filter(|c| !c.passed) {
                eprintln!("check failed: {} ({})", c.name, c.detail);
            }
            println!("{}", record.outputs.last().map(String::as_str).unwrap_or_default());
            if record.passed() {
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
