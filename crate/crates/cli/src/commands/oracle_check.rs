use anyhow::{bail, Result};
use ebnet_core::excitation::{excitation_backprop_layers, TopDownSignal};
use ebnet_core::fixtures::random_input;
use ebnet_core::oracle::{build_chain, expected_visits, sampling_agreement, ChainOptions};
use ebnet_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::args::OracleArgs;
use crate::attention::run_image;
use crate::cache::forward_cached;
use crate::prep::load_model_file;

pub const ORACLE_TOLERANCE: f64 = 1e-9;
const SAMPLING_FLOOR: f64 = 1e-3;
const SAMPLING_SIGMAS: f64 = 3.0;
const SAMPLING_PASS_FRACTION: f64 = 0.99;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerError {
    pub layer: String,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplingReport {
    pub samples: usize,
    pub checked: usize,
    pub within: usize,
    pub fraction: f64,
    pub worst_sigma: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleReport {
    pub top_layer: String,
    pub bottom_layer: String,
    pub states: usize,
    pub signals: usize,
    pub layers: Vec<LayerError>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub sampling: Option<SamplingReport>,
    pub passed: bool,
}

/// `max |a − b| / max |b|`, falling back to the absolute error when `b` is 0.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let scale = b.iter().fold(0.0f64, |m, y| m.max(y.abs()));
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

pub fn cmd_oracle_check(args: &OracleArgs) -> Result<OracleReport> {
    let loaded = load_model_file(&args.model)?;
    let model = &loaded.model;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let cache = match &args.image {
        Some(path) => run_image(&loaded, path, args.short_side)?.0,
        None => forward_cached(model, &loaded.digest, &random_input(&mut rng, model))?,
    };
    let top = model.output_layer().id().to_string();
    let bottom = match (&args.layer, &model.meta.attention_layer) {
        (Some(l), _) | (None, Some(l)) => l.clone(),
        (None, None) => match model.layers().get(1) {
            Some(l) => l.id().to_string(),
            None => bail!("model has no layer above its input"),
        },
    };
    let opts = ChainOptions {
        shift: args.lambda,
        ..ChainOptions::default()
    };
    let chain = build_chain(model, &cache, &top, &bottom, opts)?;
    let top_shape = cache.response(&top)?.shape().to_vec();

    let mut worst: Vec<LayerError> = Vec::new();
    let mut first_start = None;
    for _ in 0..args.signals.max(1) {
        let values = Tensor::from_fn(&top_shape, |_| rng.random_range(0.0..1.0));
        let signal = TopDownSignal::normalized(&top, values)?;
        let start = chain.start_from(&signal)?;
        let visits = expected_visits(&chain, &start)?;
        let fields = excitation_backprop_layers(model, &cache, &signal, &bottom, args.lambda)?;
        for f in &fields {
            let Some(range) = chain.layer_range(&f.layer_id) else {
                continue;
            };
            let err = relative_error(f.values.data(), &visits[range]);
            match worst.iter_mut().find(|w| w.layer == f.layer_id) {
                Some(w) => w.max_rel_error = w.max_rel_error.max(err),
                None => worst.push(LayerError {
                    layer: f.layer_id.clone(),
                    max_rel_error: err,
                }),
            }
        }
        first_start.get_or_insert((start, visits));
    }
    let max_rel_error = worst.iter().map(|w| w.max_rel_error).fold(0.0, f64::max);

    let sampling = match (args.samples, first_start) {
        (0, _) | (_, None) => None,
        (n, Some((start, visits))) => {
            let a = sampling_agreement(&chain, &start, &visits, n, args.seed, SAMPLING_FLOOR, SAMPLING_SIGMAS)?;
            Some(SamplingReport {
                samples: n,
                checked: a.checked,
                within: a.within,
                fraction: a.fraction(),
                worst_sigma: a.worst_sigma,
                passed: a.fraction() >= SAMPLING_PASS_FRACTION,
            })
        }
    };
    let passed = max_rel_error <= ORACLE_TOLERANCE && sampling.as_ref().is_none_or(|s| s.passed);
    Ok(OracleReport {
        top_layer: top,
        bottom_layer: bottom,
        states: chain.n_states(),
        signals: args.signals.max(1),
        layers: worst,
        max_rel_error,
        tolerance: ORACLE_TOLERANCE,
        sampling,
        passed,
    })
}
