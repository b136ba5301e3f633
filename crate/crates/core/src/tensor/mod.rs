//! Dense `f64` tensors and the numeric kernels shared by inference and
//! top-down attention.
//!
//! Activations use a channels × height × width layout with an implicit batch
//! of one. Every kernel is a pure function with a fixed reduction order, so
//! results are bit-reproducible.

mod conv;
mod lrn;
mod pool;
mod resize;

pub use conv::{conv2d_backward_data, conv2d_forward, linear_backward_data, linear_forward, ConvParams, LinearParams};
pub use lrn::{lrn_forward, LrnParams};
pub use pool::{avgpool_backward_data, avgpool_forward, maxpool_backward, maxpool_forward, PoolGeometry, PoolMask};
pub use resize::bicubic_resize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::shape(format!("invalid extents {shape:?}")));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {len} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// Panics on zero extents; meant for shapes already validated elsewhere.
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(
            !shape.is_empty() && shape.iter().all(|&d| d > 0),
            "invalid extents {shape:?}"
        );
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let mut t = Self::zeros(shape);
        t.data.iter_mut().enumerate().for_each(|(i, v)| *v = f(i));
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Extents as (channels, height, width). Rank-1 and rank-2 tensors are
    /// read as `n×1×1` and `1×h×w`.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match *self.shape.as_slice() {
            [c] => Ok((c, 1, 1)),
            [h, w] => Ok((1, h, w)),
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::shape(format!("expected a C×H×W tensor, got {:?}", self.shape))),
        }
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.check_same_shape(other)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.check_same_shape(other)?;
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn check_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(())
    }
}

/// Elementwise `num / den`, with 0 wherever `den == 0`.
pub fn safe_div(num: &Tensor, den: &Tensor) -> Result<Tensor> {
    num.zip_with(den, |n, d| if d == 0.0 { 0.0 } else { n / d })
}

/// Sums a C×H×W tensor over channels into a 1×H×W map.
pub fn channel_sum(input: &Tensor) -> Result<Tensor> {
    let (c, h, w) = input.dims3()?;
    let plane = h * w;
    let mut out = vec![0.0; plane];
    for ch in input.data.chunks_exact(plane).take(c) {
        out.iter_mut().zip(ch).for_each(|(o, v)| *o += v);
    }
    Tensor::new(vec![1, h, w], out)
}

/// Output extent of a sliding window, `(input + 2·pad − kernel) / stride + 1`.
pub(crate) fn window_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if kernel == 0 || stride == 0 {
        return Err(Error::shape("kernel and stride must be positive"));
    }
    let padded = input + 2 * pad;
    if padded < kernel {
        return Err(Error::shape(format!("window {kernel} exceeds padded input {padded}")));
    }
    Ok((padded - kernel) / stride + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_extents() {
        assert!(Tensor::new(vec![], vec![]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(vec![2, 2], vec![1.0; 4]).is_ok());
    }

    #[test]
    fn safe_div_cases() {
        let a = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(vec![2], vec![2.0, 4.0]).unwrap();
        assert_eq!(safe_div(&a, &b).unwrap().data(), &[0.5, 0.5]);

        let a = Tensor::new(vec![2], vec![1.0, 0.0]).unwrap();
        let b = Tensor::new(vec![2], vec![0.0, 5.0]).unwrap();
        assert_eq!(safe_div(&a, &b).unwrap().data(), &[0.0, 0.0]);

        let x = Tensor::from_fn(&[3, 4, 5], |i| 0.1 + i as f64 * 0.37);
        assert!(safe_div(&x, &x).unwrap().data().iter().all(|&v| v == 1.0));

        let c = Tensor::zeros(&[3]);
        assert!(safe_div(&a, &c).is_err());
    }

    #[test]
    fn channel_sum_cases() {
        let t = Tensor::new(vec![2, 1, 1], vec![3.0, 4.0]).unwrap();
        assert_eq!(channel_sum(&t).unwrap().data(), &[7.0]);

        let single = Tensor::from_fn(&[1, 3, 2], |i| i as f64);
        assert_eq!(channel_sum(&single).unwrap(), single);

        let t = Tensor::from_fn(&[4, 3, 3], |i| ((i * 7919) % 13) as f64 * 0.25);
        assert_eq!(channel_sum(&t).unwrap().sum(), t.sum());

        let bad = Tensor::zeros(&[1, 1, 1, 1]);
        assert!(channel_sum(&bad).is_err());
    }
}
