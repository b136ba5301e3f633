//! Top-down winning-probability propagation (Excitation Backprop), its
//! contrastive variant, and conversion of neuron-level probabilities into 2D
//! attention maps.
//!
//! Each winner neuron passes its probability to its children in proportion
//! to `activation × max(weight, 0)`. Over a whole network this is linear in
//! the top-down signal, which is what makes the contrastive variant a single
//! signed sweep.

mod maps;
mod steps;

pub use maps::{combine_maps, mwp_to_attention_map, AttentionMap};
pub use steps::{eb_step_affine, eb_step_concat, eb_step_lrn, eb_step_maxpool, eb_step_relu, AffineOp};

use crate::error::{Error, Result};
use crate::netgraph::{ActivationCache, Excitatory, LayerKind, ModelBundle};
use crate::tensor::Tensor;
use steps::excite;

/// Non-negative prior over one layer's neurons.
#[derive(Debug, Clone, PartialEq)]
pub struct TopDownSignal {
    layer_id: String,
    values: Tensor,
    mass: f64,
}

impl TopDownSignal {
    pub fn new(layer_id: impl Into<String>, values: Tensor) -> Result<Self> {
        if let Some(&bad) = values
            .data()
            .iter()
            .find(|v| (v.is_nan() || **v < 0.0) || !v.is_finite())
        {
            return Err(Error::NegativeWeight(bad));
        }
        let mass = values.sum();
        Ok(Self {
            layer_id: layer_id.into(),
            values,
            mass,
        })
    }

    /// Like [`TopDownSignal::new`], rescaled to total mass 1 when positive.
    pub fn normalized(layer_id: impl Into<String>, values: Tensor) -> Result<Self> {
        let s = Self::new(layer_id, values)?;
        if s.mass > 0.0 {
            let mass = s.mass;
            return Self::new(s.layer_id, s.values.scale(1.0 / mass));
        }
        Ok(s)
    }

    pub fn layer_id(&self) -> &str {
        &self.layer_id
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }
}

/// Marginal winning probabilities over one layer's neurons.
#[derive(Debug, Clone, PartialEq)]
pub struct MwpField {
    pub layer_id: String,
    pub values: Tensor,
}

impl MwpField {
    pub fn mass(&self) -> f64 {
        self.values.sum()
    }
}

/// Marginal winning probabilities at `target_layer` for `signal`.
///
/// `shift` is added to every bottom activation before it is used as a
/// selection weight; it lets activations bounded below by `-shift` take part.
pub fn excitation_backprop(
    model: &ModelBundle,
    cache: &ActivationCache,
    signal: &TopDownSignal,
    target_layer: &str,
    shift: f64,
) -> Result<MwpField> {
    let mut fields = excitation_backprop_layers(model, cache, signal, target_layer, shift)?;
    Ok(fields.pop().expect("target field is always present"))
}

/// Like [`excitation_backprop`], returning the field at every layer on the
/// way down, signal layer first and `target_layer` last. Layers that cannot
/// reach the target are skipped.
pub fn excitation_backprop_layers(
    model: &ModelBundle,
    cache: &ActivationCache,
    signal: &TopDownSignal,
    target_layer: &str,
    shift: f64,
) -> Result<Vec<MwpField>> {
    cache.check_model(model)?;
    let top = model.position(signal.layer_id())?;
    let target = resolve_target(model, top, target_layer)?;
    let expected = cache.response_at(top).shape();
    if signal.values().shape() != expected {
        return Err(Error::shape(format!(
            "signal is {:?}, layer `{}` is {:?}",
            signal.values().shape(),
            signal.layer_id(),
            expected
        )));
    }
    propagate(model, cache, top, signal.values().clone(), target, shift)
}

/// Contrastive winning probabilities before truncation: the sweep seeded
/// with the difference between the signal layer's excitatory step and the
/// step of its negated-weight dual.
pub fn contrastive_difference(
    model: &ModelBundle,
    cache: &ActivationCache,
    signal: &TopDownSignal,
    target_layer: &str,
) -> Result<Tensor> {
    cache.check_model(model)?;
    let top = model.position(signal.layer_id())?;
    let layer = &model.layers()[top];
    let dual = match layer.kind() {
        LayerKind::Conv(p) => Excitatory::Conv(p.negated().excitatory()),
        LayerKind::Fc(p) => Excitatory::Fc(p.negated().excitatory()),
        _ => return Err(Error::DualUndefined(signal.layer_id().to_string())),
    };
    let target = resolve_target(model, top, target_layer)?;
    if target == top {
        return Err(Error::InvalidTarget(
            target_layer.to_string(),
            "contrastive attention needs a target below the signal layer".into(),
        ));
    }
    if signal.values().shape() != cache.response_at(top).shape() {
        return Err(Error::shape(format!(
            "signal is {:?}, layer `{}` is {:?}",
            signal.values().shape(),
            signal.layer_id(),
            cache.response_at(top).shape()
        )));
    }

    let bottom_pos = layer.inputs[0];
    let bottom = cache.response_at(bottom_pos);
    let excitatory = layer.excitatory().expect("affine layer");
    let winners =
        excite(bottom, steps::op_for(excitatory), signal.values(), 0.0).map_err(|e| e.at_layer(layer.id()))?;
    let dual_winners =
        excite(bottom, steps::op_for(&dual), signal.values(), 0.0).map_err(|e| e.at_layer(layer.id()))?;
    let diff = winners.sub(&dual_winners)?;

    if target > bottom_pos {
        return Ok(Tensor::zeros(cache.response_at(target).shape()));
    }
    let mut fields = propagate(model, cache, bottom_pos, diff, target, 0.0)?;
    Ok(fields.pop().expect("target field").values)
}

/// Contrastive MWP: [`contrastive_difference`] truncated at zero.
pub fn contrastive_backprop(
    model: &ModelBundle,
    cache: &ActivationCache,
    signal: &TopDownSignal,
    target_layer: &str,
) -> Result<MwpField> {
    let diff = contrastive_difference(model, cache, signal, target_layer)?;
    let values = diff.map(|v| if v > 0.0 { v } else { 0.0 });
    if values.max() <= 0.0 && signal.mass() > 0.0 {
        log::warn!("contrastive map at `{target_layer}` is entirely non-positive; returning zeros");
    }
    Ok(MwpField {
        layer_id: target_layer.to_string(),
        values,
    })
}

fn resolve_target(model: &ModelBundle, top: usize, target_layer: &str) -> Result<usize> {
    let target = model.position(target_layer)?;
    if target > top {
        return Err(Error::SignalBelowTarget {
            signal: model.layers()[top].id().to_string(),
            target: target_layer.to_string(),
        });
    }
    if matches!(model.layers()[target].kind(), LayerKind::Input { .. }) {
        return Err(Error::InvalidTarget(
            target_layer.to_string(),
            "signals are not propagated to the pixel layer".into(),
        ));
    }
    Ok(target)
}

/// Layer-wise sweep from `top` (seeded with `seed`) down to `target`.
/// Contributions from several consumers of one layer are summed before the
/// layer is stepped through.
fn propagate(
    model: &ModelBundle,
    cache: &ActivationCache,
    top: usize,
    seed: Tensor,
    target: usize,
    shift: f64,
) -> Result<Vec<MwpField>> {
    let layers = model.layers();
    let below_target = model.descendants(target);
    let above_top = model.ancestors(top);
    let relevant: Vec<bool> = below_target.iter().zip(&above_top).map(|(a, b)| *a && *b).collect();

    let mut pending: Vec<Option<Tensor>> = vec![None; layers.len()];
    pending[top] = Some(seed);
    let mut fields = Vec::new();
    for pos in (target..=top).rev() {
        if !relevant[pos] {
            continue;
        }
        let values = pending[pos]
            .take()
            .unwrap_or_else(|| Tensor::zeros(cache.response_at(pos).shape()));
        if pos == target {
            fields.push(MwpField {
                layer_id: layers[pos].id().to_string(),
                values,
            });
            return Ok(fields);
        }
        let contributions = step_layer(model, cache, pos, &values, shift).map_err(|e| e.at_layer(layers[pos].id()))?;
        fields.push(MwpField {
            layer_id: layers[pos].id().to_string(),
            values,
        });
        for (input, part) in contributions {
            if !relevant[input] {
                continue;
            }
            match &mut pending[input] {
                Some(acc) => acc.add_assign(&part)?,
                slot => *slot = Some(part),
            }
        }
    }
    // target is not an ancestor of the signal layer
    fields.push(MwpField {
        layer_id: layers[target].id().to_string(),
        values: Tensor::zeros(cache.response_at(target).shape()),
    });
    Ok(fields)
}

/// Distributes one layer's probabilities onto its inputs.
fn step_layer(
    model: &ModelBundle,
    cache: &ActivationCache,
    pos: usize,
    top: &Tensor,
    shift: f64,
) -> Result<Vec<(usize, Tensor)>> {
    let layer = &model.layers()[pos];
    let inputs = &layer.inputs;
    let single = |t: Tensor| Ok(vec![(inputs[0], t)]);
    match layer.kind() {
        LayerKind::Conv(_) | LayerKind::Fc(_) => {
            let op = steps::op_for(layer.excitatory().expect("affine layer"));
            single(excite(cache.response_at(inputs[0]), op, top, shift)?)
        }
        LayerKind::AvgPool(g) => single(excite(cache.response_at(inputs[0]), AffineOp::AvgPool(g), top, shift)?),
        LayerKind::Relu => single(eb_step_relu(top)),
        LayerKind::Lrn(_) => single(eb_step_lrn(top)),
        LayerKind::Dropout => single(top.clone()),
        LayerKind::MaxPool(_) => {
            let mask = cache
                .mask_at(pos)
                .ok_or_else(|| Error::InvalidArgument("max-pool mask missing from cache".into()))?;
            single(eb_step_maxpool(top, mask, cache.response_at(inputs[0]).shape())?)
        }
        LayerKind::Flatten => single(top.clone().reshape(cache.response_at(inputs[0]).shape())?),
        LayerKind::Concat => {
            let extents: Vec<usize> = inputs.iter().map(|&p| cache.response_at(p).shape()[0]).collect();
            Ok(inputs.iter().copied().zip(eb_step_concat(top, &extents)?).collect())
        }
        LayerKind::Softmax | LayerKind::Input { .. } => Err(Error::UnsupportedLayerKind {
            id: layer.id().to_string(),
            kind: layer.kind().name().to_string(),
        }),
    }
}
