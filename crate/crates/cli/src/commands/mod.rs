mod attend;
mod inspect;
mod locate;
mod oracle_check;
mod point_game;
mod proposals;
mod synth;

pub use attend::{cmd_attend, AttendReport};
pub use inspect::{cmd_inspect, InspectReport};
pub use locate::{cmd_locate, AlphaResult, LocateCase, LocateReport, ALPHA_SWEEP};
pub use oracle_check::{cmd_oracle_check, OracleReport, ORACLE_TOLERANCE};
pub use point_game::{cmd_point_game, MethodReport, PointCase, PointGameReport};
pub use proposals::{cmd_score_proposals, GammaRecall, ProposalCase, ProposalReport, GAMMA_SWEEP};
pub use synth::cmd_synth;

use std::path::Path;

use anyhow::{Context, Result};
use ebnet_core::eval::DatasetManifest;
use serde::{Deserialize, Serialize};

/// A manifest entry that could not be evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryError {
    pub entry: usize,
    pub image: String,
    pub error: String,
}

impl EntryError {
    pub(crate) fn new(entry: usize, image: &Path, err: &anyhow::Error) -> Self {
        Self {
            entry,
            image: image.display().to_string(),
            error: format!("{err:#}"),
        }
    }
}

pub(crate) fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    DatasetManifest::parse_jsonl(&text, base).with_context(|| format!("parsing manifest {}", path.display()))
}

pub(crate) fn write_report<T: Serialize>(report: &T, out: Option<&Path>) -> Result<()> {
    if let Some(path) = out {
        let text = serde_json::to_string_pretty(report)?;
        std::fs::write(path, text + "\n").with_context(|| format!("writing report {}", path.display()))?;
    }
    Ok(())
}
