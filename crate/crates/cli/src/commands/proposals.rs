use std::path::Path;

use anyhow::{bail, Context, Result};
use ebnet_core::eval::{nms, recall_at_k, score_segments, BBox, ProposalSet, ScoredBox};
use serde::{Deserialize, Serialize};

use super::locate::{entry_map, optional_model};
use super::{load_manifest, write_report, EntryError};
use crate::args::ProposalArgs;
use crate::attention::par_map;

/// Area exponents tried when no single gamma is given.
pub const GAMMA_SWEEP: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

const IOU_THRESHOLD: f64 = 0.5;
const RECALL_KS: [usize; 3] = [1, 5, 10];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaRecall {
    pub gamma: f64,
    pub recall_at_1: f64,
    pub recall_at_5: f64,
    pub recall_at_10: f64,
    pub cases: usize,
}

/// Ranking for one (image, category) pair at the chosen gamma.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalCase {
    pub entry: usize,
    pub image: String,
    pub category: String,
    pub gamma: f64,
    /// Top boxes after suppression, best first.
    pub boxes: Vec<ScoredBox>,
    /// Hit at k = 1, 5, 10.
    pub hits: [bool; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalReport {
    pub gammas: Vec<GammaRecall>,
    pub best_gamma: f64,
    pub nms_threshold: f64,
    pub cases: Vec<ProposalCase>,
    pub errors: Vec<EntryError>,
}

fn load_proposals(path: &Path) -> Result<Vec<ProposalSet>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading proposals {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    ProposalSet::parse_jsonl(&text, base).with_context(|| format!("parsing proposals {}", path.display()))
}

pub fn cmd_score_proposals(args: &ProposalArgs) -> Result<ProposalReport> {
    let manifest = load_manifest(&args.manifest)?;
    let proposals = load_proposals(&args.proposals)?;
    if proposals.len() != manifest.entries.len() {
        bail!(
            "{} proposal lines for {} manifest entries",
            proposals.len(),
            manifest.entries.len()
        );
    }
    for (i, (p, e)) in proposals.iter().zip(&manifest.entries).enumerate() {
        if p.image != e.image {
            bail!(
                "proposal line {} is for {}, manifest entry is {}",
                i + 1,
                p.image.display(),
                e.image.display()
            );
        }
    }
    let model = optional_model(
        args.model.as_deref(),
        args.layer.as_deref(),
        args.contrastive,
        args.lambda,
    )?;
    let gammas: Vec<f64> = match args.gamma {
        Some(g) => vec![g],
        None => GAMMA_SWEEP.to_vec(),
    };

    // per entry: per category, per gamma, the ranking after suppression
    type Ranked = (String, Vec<(Vec<ScoredBox>, [bool; 3])>);
    let per_entry = par_map(args.jobs, &manifest.entries, |i, entry| -> Result<Vec<Ranked>> {
        let mut out = Vec::new();
        for category in &entry.targets {
            let map = entry_map(entry, category, model.as_ref(), args.short_side)?;
            let gt: Vec<BBox> = entry.boxes_of(category);
            let mut per_gamma = Vec::with_capacity(gammas.len());
            for &g in &gammas {
                let kept = nms(&score_segments(&map, &proposals[i].segments, g)?, args.nms);
                let hits = RECALL_KS.map(|k| recall_at_k(&kept, &gt, k, IOU_THRESHOLD));
                per_gamma.push((kept, hits));
            }
            out.push((category.clone(), per_gamma));
        }
        Ok(out)
    })?;

    let mut ranked = Vec::new();
    let mut errors = Vec::new();
    for (i, r) in per_entry.into_iter().enumerate() {
        match r {
            Ok(v) => ranked.extend(v.into_iter().map(|c| (i, c))),
            Err(e) => errors.push(EntryError::new(i, &manifest.entries[i].image, &e)),
        }
    }

    let n = ranked.len();
    let rate = |g: usize, k: usize| {
        let hits = ranked.iter().filter(|(_, (_, per))| per[g].1[k]).count();
        if n == 0 {
            0.0
        } else {
            hits as f64 / n as f64
        }
    };
    let results: Vec<GammaRecall> = gammas
        .iter()
        .enumerate()
        .map(|(g, &gamma)| GammaRecall {
            gamma,
            recall_at_1: rate(g, 0),
            recall_at_5: rate(g, 1),
            recall_at_10: rate(g, 2),
            cases: n,
        })
        .collect();
    // best recall@1, then recall@5, then the lowest gamma
    let best = (0..results.len())
        .reduce(|b, g| {
            let key = |r: &GammaRecall| (r.recall_at_1, r.recall_at_5);
            if key(&results[g]) > key(&results[b]) {
                g
            } else {
                b
            }
        })
        .expect("at least one gamma");

    let cases = ranked
        .into_iter()
        .map(|(i, (category, mut per))| {
            let (mut boxes, hits) = per.swap_remove(best);
            boxes.truncate(RECALL_KS[2]);
            ProposalCase {
                entry: i,
                image: manifest.entries[i].image.display().to_string(),
                category,
                gamma: gammas[best],
                boxes,
                hits,
            }
        })
        .collect();
    let report = ProposalReport {
        best_gamma: gammas[best],
        gammas: results,
        nms_threshold: args.nms,
        cases,
        errors,
    };
    write_report(&report, args.out.as_deref())?;
    Ok(report)
}
