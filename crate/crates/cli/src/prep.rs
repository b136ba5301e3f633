//! Loading models, images and maps, and turning images into network input.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use ebnet_core::io::{read_ebmap, read_map_pgm, read_pnm};
use ebnet_core::netgraph::{load_model, LayerKind, ModelBundle};
use ebnet_core::tensor::bicubic_resize;
use ebnet_core::Tensor;
use sha2::{Digest, Sha256};

/// A model together with a digest of the files it came from.
pub struct LoadedModel {
    pub model: ModelBundle,
    pub digest: [u8; 32],
}

/// The weight blob lives next to the manifest with a `.bin` extension.
pub fn weights_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

pub fn load_model_file(path: &Path) -> Result<LoadedModel> {
    let manifest = std::fs::read(path).with_context(|| format!("reading model {}", path.display()))?;
    let wpath = weights_path(path);
    let weights = std::fs::read(&wpath).with_context(|| format!("reading weights {}", wpath.display()))?;
    let model = load_model(&manifest, &weights).with_context(|| format!("loading model {}", path.display()))?;
    let mut h = Sha256::new();
    h.update((manifest.len() as u64).to_le_bytes());
    h.update(&manifest);
    h.update(&weights);
    Ok(LoadedModel {
        model,
        digest: h.finalize().into(),
    })
}

pub fn read_image(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).with_context(|| format!("reading image {}", path.display()))?;
    read_pnm(&bytes).with_context(|| format!("decoding image {}", path.display()))
}

/// Reads a 1×H×W map from an `EBMAP` dump or a 16-bit PGM.
pub fn read_map_file(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).with_context(|| format!("reading map {}", path.display()))?;
    let map = if bytes.starts_with(b"EBMAP") {
        read_ebmap(&bytes)
    } else {
        read_map_pgm(&bytes)
    };
    map.with_context(|| format!("decoding map {}", path.display()))
}

/// Output extents `(h, w)` with the shorter side scaled to `short`.
pub fn short_side_extents(h: usize, w: usize, short: usize) -> (usize, usize) {
    let scale = short as f64 / h.min(w) as f64;
    let fit = |v: usize| ((v as f64 * scale).round() as usize).max(1);
    if h <= w {
        (short, fit(w))
    } else {
        (fit(h), short)
    }
}

/// Resizes a raw image to what the model expects, subtracts the per-channel
/// means and applies the scale from the model metadata. Fixed-size inputs
/// are resized to their declared extents; flexible ones keep the image size
/// unless `short_side` is given.
pub fn preprocess(model: &ModelBundle, raw: &Tensor, short_side: Option<usize>) -> Result<Tensor> {
    let LayerKind::Input { shape, flexible } = model.input_layer().kind() else {
        bail!("model has no input layer");
    };
    let (c, h, w) = raw.dims3()?;
    let image = match (c, shape[0]) {
        (a, b) if a == b => raw.clone(),
        (1, 3) => Tensor::new(vec![3, h, w], raw.data().repeat(3))?,
        (a, b) => bail!("image has {a} channels, model expects {b}"),
    };
    let target = match (flexible, short_side) {
        (false, _) => (shape[1], shape[2]),
        (true, Some(s)) => short_side_extents(h, w, s),
        (true, None) => (h, w),
    };
    let resized = if target == (h, w) {
        image
    } else {
        bicubic_resize(&image, target.0, target.1, false)?
    };
    let meta = &model.meta;
    if !meta.mean.is_empty() && meta.mean.len() != shape[0] {
        bail!("model metadata has {} means for {} channels", meta.mean.len(), shape[0]);
    }
    let plane = target.0 * target.1;
    let scale = meta.scale.unwrap_or(1.0);
    let mut out = resized;
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let mean = meta.mean.get(i / plane).copied().unwrap_or(0.0);
        *v = (*v - mean) * scale;
    }
    Ok(out)
}

/// Output-channel index for a category name: a label from the model
/// metadata, or a plain number.
pub fn class_index(model: &ModelBundle, name: &str) -> Result<usize> {
    if let Some(i) = model.meta.labels.iter().position(|l| l == name) {
        return Ok(i);
    }
    name.parse::<usize>()
        .map_err(|_| anyhow!("`{name}` is neither a model label nor a class index"))
}

/// Parses `3`, `cat`, `3,5` or `3:0.7,5:0.3` into indices and weights.
pub fn parse_class_spec(model: &ModelBundle, spec: &str) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut indices = Vec::new();
    let mut weights = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (name, weight) = match part.rsplit_once(':') {
            Some((n, w)) => (
                n,
                w.parse::<f64>()
                    .with_context(|| format!("bad class weight in `{part}`"))?,
            ),
            None => (part, 1.0),
        };
        indices.push(class_index(model, name)?);
        weights.push(weight);
    }
    if indices.is_empty() {
        bail!("empty class specification");
    }
    Ok((indices, weights))
}
