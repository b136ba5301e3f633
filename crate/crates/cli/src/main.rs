use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use ebnet_cli::args::Cli;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match ebnet_cli::run(&cli) {
        Ok(outcome) => {
            // a closed pipe on stdout is not an error worth reporting
            if let Ok(text) = serde_json::to_string_pretty(&outcome.report) {
                let _ = writeln!(std::io::stdout().lock(), "{text}");
            }
            if outcome.failures > 0 {
                eprintln!("{} entries failed", outcome.failures);
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
