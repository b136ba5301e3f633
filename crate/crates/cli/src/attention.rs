//! Shared image → attention-map pipeline.

use std::path::Path;

use anyhow::{anyhow, bail, Result};
use ebnet_core::excitation::{
    contrastive_backprop, excitation_backprop, mwp_to_attention_map, AttentionMap, TopDownSignal,
};
use ebnet_core::netgraph::{class_signal, confidence_signal, ActivationCache, LayerKind, ModelBundle};
use rayon::prelude::*;

use crate::cache::forward_cached;
use crate::prep::{preprocess, read_image, LoadedModel};

#[derive(Debug, Clone)]
pub struct Settings {
    pub layer: String,
    pub contrastive: bool,
    pub lambda: f64,
}

impl Settings {
    pub fn new(model: &ModelBundle, layer: Option<&str>, contrastive: bool, lambda: f64) -> Result<Self> {
        if contrastive && lambda != 0.0 {
            bail!("--lambda cannot be combined with --contrastive");
        }
        let layer = match layer {
            Some(l) => l.to_string(),
            None => model
                .meta
                .attention_layer
                .clone()
                .ok_or_else(|| anyhow!("model names no attention layer; pass --layer"))?,
        };
        model.layer(&layer)?;
        Ok(Self {
            layer,
            contrastive,
            lambda,
        })
    }

    pub fn method(&self) -> &'static str {
        if self.contrastive {
            "cmwp"
        } else {
            "mwp"
        }
    }
}

/// Whether the contrastive variant is available: it needs an affine output.
pub fn supports_contrastive(model: &ModelBundle) -> bool {
    matches!(model.output_layer().kind(), LayerKind::Conv(_) | LayerKind::Fc(_))
}

/// Forward pass for an image file. Returns the cache and the image's
/// original (height, width).
pub fn run_image(
    loaded: &LoadedModel,
    path: &Path,
    short_side: Option<usize>,
) -> Result<(ActivationCache, (usize, usize))> {
    let raw = read_image(path)?;
    let (_, h, w) = raw.dims3()?;
    let input = preprocess(&loaded.model, &raw, short_side)?;
    Ok((forward_cached(&loaded.model, &loaded.digest, &input)?, (h, w)))
}

/// One-hot prior for classifier outputs, the class confidence map for
/// spatial outputs.
pub fn class_prior(model: &ModelBundle, cache: &ActivationCache, class: usize) -> Result<TopDownSignal> {
    let shape = &model.output_layer().output_shape;
    let spatial = shape.iter().skip(1).product::<usize>() > 1;
    Ok(if spatial {
        confidence_signal(model, cache, class)?
    } else {
        class_signal(model, &[class], &[1.0])?
    })
}

/// Attention map at image resolution and the probability mass that reached
/// the attention layer.
pub fn attention_map(
    model: &ModelBundle,
    cache: &ActivationCache,
    signal: &TopDownSignal,
    s: &Settings,
    extents: (usize, usize),
    descriptor: &str,
) -> Result<(AttentionMap, f64)> {
    let field = if s.contrastive {
        contrastive_backprop(model, cache, signal, &s.layer)?
    } else {
        excitation_backprop(model, cache, signal, &s.layer, s.lambda)?
    };
    let mut map = mwp_to_attention_map(&field, extents)?;
    map.signal_descriptor = descriptor.to_string();
    Ok((map, field.mass()))
}

/// Maps `f` over `items` on `jobs` threads (all cores when 0), keeping
/// input order.
pub fn par_map<T: Sync, R: Send>(jobs: usize, items: &[T], f: impl Fn(usize, &T) -> R + Sync) -> Result<Vec<R>> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    Ok(pool.install(|| items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()))
}
