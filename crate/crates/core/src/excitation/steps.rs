//! Per-layer propagation rules.

use crate::error::{Error, Result};
use crate::netgraph::Excitatory;
use crate::tensor::{
    avgpool_backward_data, avgpool_forward, conv2d_backward_data, conv2d_forward, linear_backward_data, linear_forward,
    maxpool_backward, safe_div, ConvParams, LinearParams, PoolGeometry, PoolMask, Tensor,
};

/// A layer that applies a fixed linear map to its input: convolution,
/// fully-connected, or average pooling.
#[derive(Debug, Clone, Copy)]
pub enum AffineOp<'a> {
    Conv(&'a ConvParams),
    Fc(&'a LinearParams),
    AvgPool(&'a PoolGeometry),
}

impl AffineOp<'_> {
    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            AffineOp::Conv(p) => conv2d_forward(x, p),
            AffineOp::Fc(p) => linear_forward(x, p),
            AffineOp::AvgPool(g) => avgpool_forward(x, g),
        }
    }

    fn apply_transpose(&self, y: &Tensor, input_shape: &[usize]) -> Result<Tensor> {
        match self {
            AffineOp::Conv(p) => conv2d_backward_data(y, p, input_shape),
            AffineOp::Fc(p) => linear_backward_data(y, p, input_shape),
            AffineOp::AvgPool(g) => avgpool_backward_data(y, g, input_shape),
        }
    }
}

pub(crate) fn op_for(e: &Excitatory) -> AffineOp<'_> {
    match e {
        Excitatory::Conv(p) => AffineOp::Conv(p),
        Excitatory::Fc(p) => AffineOp::Fc(p),
    }
}

/// One excitation step through an affine layer:
///
/// 1. `W⁺ = max(W, 0)`, bias dropped
/// 2. `X = W⁺ᵀ (a + shift)`
/// 3. `Y = top ⊘ X` (zero where `X = 0`)
/// 4. `Z = W⁺ Y`
/// 5. `bottom = (a + shift) ⊙ Z`
pub fn eb_step_affine(bottom_act: &Tensor, op: AffineOp<'_>, top_mwp: &Tensor, shift: f64) -> Result<Tensor> {
    match op {
        AffineOp::Conv(p) => excite(bottom_act, AffineOp::Conv(&p.excitatory()), top_mwp, shift),
        AffineOp::Fc(p) => excite(bottom_act, AffineOp::Fc(&p.excitatory()), top_mwp, shift),
        AffineOp::AvgPool(_) => excite(bottom_act, op, top_mwp, shift),
    }
}

/// Steps 2–5 of [`eb_step_affine`] for an operator whose weights are already
/// non-negative.
pub(crate) fn excite(bottom_act: &Tensor, op: AffineOp<'_>, top_mwp: &Tensor, shift: f64) -> Result<Tensor> {
    let shifted = if shift == 0.0 {
        bottom_act.clone()
    } else {
        bottom_act.map(|v| v + shift)
    };
    if let Some(&v) = shifted.data().iter().find(|v| v.is_nan() || **v < 0.0) {
        return Err(Error::NegativeActivation {
            value: v - shift,
            shift,
        });
    }
    let x = op.apply(&shifted)?;
    let y = safe_div(top_mwp, &x)?;
    let z = op.apply_transpose(&y, shifted.shape())?;
    shifted.mul(&z)
}

/// Rectifiers have a single child; zero-activation neurons already received
/// no probability from the step above.
pub fn eb_step_relu(top_mwp: &Tensor) -> Tensor {
    top_mwp.clone()
}

/// The normalization factor is ignored, leaving a single child per neuron.
pub fn eb_step_lrn(top_mwp: &Tensor) -> Tensor {
    top_mwp.clone()
}

/// Routes each pooled neuron's probability to its recorded argmax.
pub fn eb_step_maxpool(top_mwp: &Tensor, mask: &PoolMask, bottom_shape: &[usize]) -> Result<Tensor> {
    if mask.input_shape != bottom_shape {
        return Err(Error::shape(format!(
            "pool mask was recorded for {:?}, bottom is {:?}",
            mask.input_shape, bottom_shape
        )));
    }
    maxpool_backward(top_mwp, mask)
}

/// Splits a concatenated layer's probabilities back into its inputs.
pub fn eb_step_concat(top_mwp: &Tensor, segment_channels: &[usize]) -> Result<Vec<Tensor>> {
    let (c, h, w) = top_mwp.dims3()?;
    if segment_channels.iter().sum::<usize>() != c || segment_channels.contains(&0) {
        return Err(Error::shape(format!(
            "segments {segment_channels:?} do not partition {c} channels"
        )));
    }
    let plane = h * w;
    let mut start = 0;
    segment_channels
        .iter()
        .map(|&n| {
            let part = top_mwp.data()[start * plane..(start + n) * plane].to_vec();
            start += n;
            Tensor::new(vec![n, h, w], part)
        })
        .collect()
}
