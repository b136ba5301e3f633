//! Library side of the `ebnet` command: argument types, the subcommands
//! and the synthetic fixtures they share with the tests.

pub mod args;
pub mod attention;
pub mod cache;
pub mod commands;
pub mod prep;
pub mod synth;

use anyhow::Result;
use serde_json::Value;

use args::{Cli, Command};

/// A finished run: the JSON report and how many entries failed.
#[derive(Debug)]
pub struct Outcome {
    pub report: Value,
    pub failures: usize,
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    let (report, failures) = match &cli.command {
        Command::Inspect(a) => (serde_json::to_value(commands::cmd_inspect(a)?)?, 0),
        Command::Attend(a) => (serde_json::to_value(commands::cmd_attend(a)?)?, 0),
        Command::OracleCheck(a) => {
            let r = commands::cmd_oracle_check(a)?;
            let failed = usize::from(!r.passed);
            (serde_json::to_value(r)?, failed)
        }
        Command::PointGame(a) => {
            let r = commands::cmd_point_game(a)?;
            let n = r.errors.len();
            (serde_json::to_value(r)?, n)
        }
        Command::Locate(a) => {
            let r = commands::cmd_locate(a)?;
            let n = r.errors.len();
            (serde_json::to_value(r)?, n)
        }
        Command::ScoreProposals(a) => {
            let r = commands::cmd_score_proposals(a)?;
            let n = r.errors.len();
            (serde_json::to_value(r)?, n)
        }
        Command::Synth(a) => (commands::cmd_synth(a)?, 0),
    };
    Ok(Outcome { report, failures })
}
