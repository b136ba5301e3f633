use std::path::Path;

use anyhow::{anyhow, bail, Result};
use ebnet_core::eval::{extract_bbox, iou, BBox, Entry};
use ebnet_core::excitation::AttentionMap;
use serde::{Deserialize, Serialize};

use super::{load_manifest, write_report, EntryError};
use crate::args::LocateArgs;
use crate::attention::{attention_map, class_prior, par_map, run_image, Settings};
use crate::prep::{class_index, load_model_file, read_map_file, LoadedModel};

/// Threshold factors tried when no single alpha is given: 0, 0.5, …, 10.
pub const ALPHA_SWEEP: [f64; 21] = {
    let mut a = [0.0; 21];
    let mut i = 0;
    while i < 21 {
        a[i] = i as f64 * 0.5;
        i += 1;
    }
    a
};

const IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaResult {
    pub alpha: f64,
    pub correct: usize,
    pub total: usize,
    pub error_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocateCase {
    pub entry: usize,
    pub image: String,
    pub category: String,
    /// Box per alpha, `None` when no pixel passed the threshold.
    pub boxes: Vec<Option<BBox>>,
    pub ious: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocateReport {
    pub alphas: Vec<AlphaResult>,
    pub best_alpha: f64,
    pub best_error_rate: f64,
    pub cases: Vec<LocateCase>,
    pub errors: Vec<EntryError>,
}

/// The map for an entry: its precomputed `map` file, or one computed with
/// the model for `category`.
pub(crate) fn entry_map(
    entry: &Entry,
    category: &str,
    model: Option<&(LoadedModel, Settings)>,
    short_side: Option<usize>,
) -> Result<AttentionMap> {
    if let Some(path) = &entry.map {
        return load_entry_map(path, entry);
    }
    let (loaded, settings) = model.ok_or_else(|| anyhow!("entry has no precomputed map and no --model was given"))?;
    let (cache, extents) = run_image(loaded, &entry.image, short_side)?;
    let signal = class_prior(&loaded.model, &cache, class_index(&loaded.model, category)?)?;
    Ok(attention_map(&loaded.model, &cache, &signal, settings, extents, category)?.0)
}

fn load_entry_map(path: &Path, entry: &Entry) -> Result<AttentionMap> {
    let values = read_map_file(path)?;
    let (_, h, w) = values.dims3()?;
    if (h, w) != (entry.height, entry.width) {
        bail!(
            "map {} is {w}x{h}, image is {}x{}",
            path.display(),
            entry.width,
            entry.height
        );
    }
    Ok(AttentionMap::new(values, "precomputed", path.display().to_string())?)
}

pub(crate) fn optional_model(
    path: Option<&Path>,
    layer: Option<&str>,
    contrastive: bool,
    lambda: f64,
) -> Result<Option<(LoadedModel, Settings)>> {
    path.map(|p| {
        let loaded = load_model_file(p)?;
        let settings = Settings::new(&loaded.model, layer, contrastive, lambda)?;
        Ok((loaded, settings))
    })
    .transpose()
}

pub fn cmd_locate(args: &LocateArgs) -> Result<LocateReport> {
    let manifest = load_manifest(&args.manifest)?;
    let model = optional_model(
        args.model.as_deref(),
        args.layer.as_deref(),
        args.contrastive,
        args.lambda,
    )?;
    let alphas: Vec<f64> = match args.alpha {
        Some(a) => vec![a],
        None => ALPHA_SWEEP.to_vec(),
    };

    let per_entry = par_map(args.jobs, &manifest.entries, |i, entry| -> Result<LocateCase> {
        let [category] = entry.targets.as_slice() else {
            bail!(
                "localization expects exactly one labelled category, found {}",
                entry.targets.len()
            );
        };
        let map = entry_map(entry, category, model.as_ref(), args.short_side)?;
        let gt = entry.boxes_of(category);
        let mut boxes = Vec::with_capacity(alphas.len());
        let mut ious = Vec::with_capacity(alphas.len());
        for &a in &alphas {
            match extract_bbox(&map, a) {
                Ok(b) => {
                    ious.push(gt.iter().map(|g| iou(&b, g)).fold(0.0, f64::max));
                    boxes.push(Some(b));
                }
                Err(ebnet_core::Error::EmptyAttention) => {
                    ious.push(0.0);
                    boxes.push(None);
                }
                Err(e) => return Err(e.into()),
            }
        }
        Ok(LocateCase {
            entry: i,
            image: entry.image.display().to_string(),
            category: category.clone(),
            boxes,
            ious,
        })
    })?;

    let total = manifest.entries.len();
    let mut cases = Vec::new();
    let mut errors = Vec::new();
    for (i, r) in per_entry.into_iter().enumerate() {
        match r {
            Ok(c) => {
                // a sweep that runs past the map's peak is expected to empty
                // it; only a map empty at every alpha is an entry failure
                if c.boxes.iter().all(Option::is_none) {
                    let e = anyhow!(ebnet_core::Error::EmptyAttention);
                    errors.push(EntryError::new(i, &manifest.entries[i].image, &e));
                }
                cases.push(c);
            }
            Err(e) => errors.push(EntryError::new(i, &manifest.entries[i].image, &e)),
        }
    }
    let results: Vec<AlphaResult> = alphas
        .iter()
        .enumerate()
        .map(|(k, &alpha)| {
            let correct = cases.iter().filter(|c| c.ious[k] >= IOU_THRESHOLD).count();
            AlphaResult {
                alpha,
                correct,
                total,
                error_rate: if total == 0 {
                    0.0
                } else {
                    1.0 - correct as f64 / total as f64
                },
            }
        })
        .collect();
    // lowest error, earliest alpha on ties
    let best = results
        .iter()
        .fold(None::<&AlphaResult>, |b, r| match b {
            Some(b) if b.error_rate <= r.error_rate => Some(b),
            _ => Some(r),
        })
        .expect("at least one alpha");
    let report = LocateReport {
        best_alpha: best.alpha,
        best_error_rate: best.error_rate,
        alphas: results,
        cases,
        errors,
    };
    write_report(&report, args.out.as_deref())?;
    Ok(report)
}
