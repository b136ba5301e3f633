use std::collections::BTreeMap;

use anyhow::Result;
use ebnet_core::eval::{difficult_targets, pointing_game, pointing_hit, PointingReport};
use serde::{Deserialize, Serialize};

use super::{load_manifest, write_report, EntryError};
use crate::args::PointGameArgs;
use crate::attention::{attention_map, class_prior, par_map, run_image, supports_contrastive, Settings};
use crate::prep::{class_index, load_model_file};

/// One (image, category) test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCase {
    pub entry: usize,
    pub image: String,
    pub category: String,
    pub difficult: bool,
    /// Method name → hit.
    pub hits: BTreeMap<String, bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub all: PointingReport,
    /// Only categories with at least one difficult case are listed.
    pub difficult: Option<PointingReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointGameReport {
    pub layer: String,
    pub margin: usize,
    pub methods: BTreeMap<String, MethodReport>,
    pub cases: Vec<PointCase>,
    pub errors: Vec<EntryError>,
}

pub fn cmd_point_game(args: &PointGameArgs) -> Result<PointGameReport> {
    let loaded = load_model_file(&args.model)?;
    let model = &loaded.model;
    let manifest = load_manifest(&args.manifest)?;
    let mut methods = vec![Settings::new(model, args.layer.as_deref(), false, args.lambda)?];
    if supports_contrastive(model) {
        methods.push(Settings::new(model, args.layer.as_deref(), true, 0.0)?);
    } else {
        log::warn!("output layer is not affine; skipping the contrastive method");
    }

    let per_entry = par_map(args.jobs, &manifest.entries, |i, entry| -> Result<Vec<PointCase>> {
        let (cache, extents) = run_image(&loaded, &entry.image, args.short_side)?;
        let difficult = difficult_targets(entry);
        let mut cases = Vec::new();
        for category in &entry.targets {
            let signal = class_prior(model, &cache, class_index(model, category)?)?;
            let regions = entry.regions_of(category);
            let mut hits = BTreeMap::new();
            for m in &methods {
                let (map, _) = attention_map(model, &cache, &signal, m, extents, category)?;
                hits.insert(m.method().to_string(), pointing_hit(&map, &regions, args.margin)?);
            }
            cases.push(PointCase {
                entry: i,
                image: entry.image.display().to_string(),
                category: category.clone(),
                difficult: difficult.contains(category),
                hits,
            });
        }
        Ok(cases)
    })?;

    let mut cases = Vec::new();
    let mut errors = Vec::new();
    for (i, r) in per_entry.into_iter().enumerate() {
        match r {
            Ok(c) => cases.extend(c),
            Err(e) => errors.push(EntryError::new(i, &manifest.entries[i].image, &e)),
        }
    }

    let mut reports = BTreeMap::new();
    for m in &methods {
        let name = m.method();
        let results = |only_difficult: bool| -> Vec<(String, bool)> {
            cases
                .iter()
                .filter(|c| c.difficult || !only_difficult)
                .map(|c| (c.category.clone(), c.hits[name]))
                .collect()
        };
        let all = pointing_game(&results(false), &manifest.categories)?;
        let hard = results(true);
        let hard_categories: Vec<String> = manifest
            .categories
            .iter()
            .filter(|c| hard.iter().any(|(h, _)| h == *c))
            .cloned()
            .collect();
        let difficult = if hard_categories.is_empty() {
            None
        } else {
            Some(pointing_game(&hard, &hard_categories)?)
        };
        reports.insert(name.to_string(), MethodReport { all, difficult });
    }
    let report = PointGameReport {
        layer: methods[0].layer.clone(),
        margin: args.margin,
        methods: reports,
        cases,
        errors,
    };
    write_report(&report, args.out.as_deref())?;
    Ok(report)
}
