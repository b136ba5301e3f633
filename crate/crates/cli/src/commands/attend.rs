use anyhow::{bail, Context, Result};
use ebnet_core::io::{write_ebmap, write_map_pgm};
use ebnet_core::netgraph::{class_signal, spatial_signal};
use serde::{Deserialize, Serialize};

use crate::args::AttendArgs;
use crate::attention::{attention_map, run_image, Settings};
use crate::prep::{load_model_file, parse_class_spec, read_map_file};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttendReport {
    pub image: String,
    pub layer: String,
    pub method: String,
    pub signal: String,
    pub lambda: f64,
    pub signal_mass: f64,
    /// Probability mass that reached the attention layer.
    pub mass_retained: f64,
    pub height: usize,
    pub width: usize,
    pub peak: (usize, usize),
    pub pgm: String,
    pub ebmap: String,
}

pub fn cmd_attend(args: &AttendArgs) -> Result<AttendReport> {
    let loaded = load_model_file(&args.model)?;
    let model = &loaded.model;
    let settings = Settings::new(model, args.layer.as_deref(), args.contrastive, args.lambda)?;
    let (cache, extents) = run_image(&loaded, &args.image, args.short_side)?;

    let Some(class) = &args.class else {
        bail!("--class is required (with --signal-map it selects the map's class)");
    };
    let (indices, weights) = parse_class_spec(model, class)?;
    let (signal, descriptor) = match &args.signal_map {
        None => (class_signal(model, &indices, &weights)?, format!("class {class}")),
        Some(path) => {
            if indices.len() != 1 {
                bail!("--signal-map takes exactly one class");
            }
            let map = read_map_file(path)?;
            let (_, h, w) = map.dims3()?;
            let map = map.reshape(&[h, w])?;
            (
                spatial_signal(model, indices[0], &map)?,
                format!("class {class} map {}", path.display()),
            )
        }
    };
    let (map, retained) = attention_map(model, &cache, &signal, &settings, extents, &descriptor)?;

    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let stem = args
        .image
        .file_stem()
        .map_or("image".into(), |s| s.to_string_lossy().into_owned());
    let base = args.out.join(format!("{stem}_{}", settings.method()));
    let pgm = base.with_extension("pgm");
    let ebmap = base.with_extension("ebmap");
    std::fs::write(&pgm, write_map_pgm(&map))?;
    std::fs::write(&ebmap, write_ebmap(&map))?;

    let report = AttendReport {
        image: args.image.display().to_string(),
        layer: settings.layer.clone(),
        method: settings.method().to_string(),
        signal: descriptor,
        lambda: settings.lambda,
        signal_mass: signal.mass(),
        mass_retained: retained,
        height: map.height(),
        width: map.width(),
        peak: ebnet_core::eval::argmax(&map),
        pgm: pgm.display().to_string(),
        ebmap: ebmap.display().to_string(),
    };
    let summary = base.with_extension("json");
    std::fs::write(&summary, serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(report)
}
