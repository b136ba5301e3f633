use super::{ActivationCache, ModelBundle};
use crate::error::{Error, Result};
use crate::excitation::TopDownSignal;
use crate::tensor::Tensor;

/// Prior over the output layer built from class indices and non-negative
/// weights, normalized to sum 1. On a spatial output layer each class
/// channel is weighted uniformly across positions.
pub fn class_signal(model: &ModelBundle, class_indices: &[usize], weights: &[f64]) -> Result<TopDownSignal> {
    if class_indices.len() != weights.len() {
        return Err(Error::InvalidArgument(format!(
            "{} class indices but {} weights",
            class_indices.len(),
            weights.len()
        )));
    }
    let out = model.output_layer();
    let [k, h, w] = out.output_shape[..] else {
        return Err(Error::shape(format!("output layer shape {:?}", out.output_shape)));
    };
    let mut values = Tensor::zeros(&[k, h, w]);
    let plane = h * w;
    for (&idx, &wt) in class_indices.iter().zip(weights) {
        if idx >= k {
            return Err(Error::IndexOutOfRange { index: idx, len: k });
        }
        if (wt.is_nan() || wt < 0.0) || !wt.is_finite() {
            return Err(Error::NegativeWeight(wt));
        }
        values.data_mut()[idx * plane..(idx + 1) * plane]
            .iter_mut()
            .for_each(|v| *v += wt / plane as f64);
    }
    TopDownSignal::normalized(out.id(), values)
}

/// Caller-supplied spatial confidence map for one class of a spatial output
/// layer, normalized to sum 1.
pub fn spatial_signal(model: &ModelBundle, class_index: usize, map: &Tensor) -> Result<TopDownSignal> {
    let out = model.output_layer();
    let [k, h, w] = out.output_shape[..] else {
        return Err(Error::shape(format!("output layer shape {:?}", out.output_shape)));
    };
    spatial_signal_with_shape(out.id(), [k, h, w], class_index, map)
}

/// The output layer's own response for `class_index`, clamped at zero and
/// normalized, as a signal. Follows the cache's (possibly flexible) extents.
pub fn confidence_signal(model: &ModelBundle, cache: &ActivationCache, class_index: usize) -> Result<TopDownSignal> {
    let out = model.output_layer();
    let response = cache.response(out.id())?;
    let (k, h, w) = response.dims3()?;
    if class_index >= k {
        return Err(Error::IndexOutOfRange {
            index: class_index,
            len: k,
        });
    }
    let plane = h * w;
    let map = Tensor::new(
        vec![h, w],
        response.data()[class_index * plane..(class_index + 1) * plane]
            .iter()
            .map(|v| v.max(0.0))
            .collect(),
    )?;
    spatial_signal_with_shape(out.id(), [k, h, w], class_index, &map)
}

fn spatial_signal_with_shape(
    layer: &str,
    shape: [usize; 3],
    class_index: usize,
    map: &Tensor,
) -> Result<TopDownSignal> {
    let [k, h, w] = shape;
    if class_index >= k {
        return Err(Error::IndexOutOfRange {
            index: class_index,
            len: k,
        });
    }
    if map.len() != h * w {
        return Err(Error::shape(format!(
            "confidence map has {:?}, output layer is {h}×{w}",
            map.shape()
        )));
    }
    if let Some(&bad) = map.data().iter().find(|v| (v.is_nan() || **v < 0.0) || !v.is_finite()) {
        return Err(Error::NegativeWeight(bad));
    }
    let mut values = Tensor::zeros(&[k, h, w]);
    values.data_mut()[class_index * h * w..(class_index + 1) * h * w].copy_from_slice(map.data());
    TopDownSignal::normalized(layer, values)
}
