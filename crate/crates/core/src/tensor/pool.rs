use super::{window_extent, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolGeometry {
    pub window: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl PoolGeometry {
    pub fn new(window: (usize, usize), stride: (usize, usize), padding: (usize, usize)) -> Result<Self> {
        if window.0 == 0 || window.1 == 0 || stride.0 == 0 || stride.1 == 0 {
            return Err(Error::shape("pool window and stride must be positive"));
        }
        if padding.0 >= window.0 || padding.1 >= window.1 {
            return Err(Error::shape(format!(
                "pool padding {padding:?} must be smaller than window {window:?}"
            )));
        }
        Ok(Self {
            window,
            stride,
            padding,
        })
    }

    pub fn output_shape(&self, input_shape: &[usize]) -> Result<Vec<usize>> {
        let [c, h, w] = *input_shape else {
            return Err(Error::shape(format!("pool input must be C×H×W, got {input_shape:?}")));
        };
        Ok(vec![
            c,
            window_extent(h, self.window.0, self.stride.0, self.padding.0)?,
            window_extent(w, self.window.1, self.stride.1, self.padding.1)?,
        ])
    }

    fn divisor(&self) -> f64 {
        (self.window.0 * self.window.1) as f64
    }

    /// In-bounds input rows (or columns) covered by output position `o`.
    fn span(&self, o: usize, axis: usize, extent: usize) -> std::ops::Range<usize> {
        let (k, s, p) = if axis == 0 {
            (self.window.0, self.stride.0, self.padding.0)
        } else {
            (self.window.1, self.stride.1, self.padding.1)
        };
        let start = o * s;
        let lo = start.saturating_sub(p);
        let hi = (start + k).saturating_sub(p).min(extent);
        lo..hi
    }
}

/// Argmax positions of a max-pool: flat C×H×W input index per pooled output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolMask {
    pub indices: Vec<usize>,
    pub output_shape: Vec<usize>,
    pub input_shape: Vec<usize>,
}

/// Max pooling. Padding never wins; ties go to the lowest flat index.
pub fn maxpool_forward(input: &Tensor, geom: &PoolGeometry) -> Result<(Tensor, PoolMask)> {
    let out_shape = geom.output_shape(input.shape())?;
    let (c, h, w) = input.dims3()?;
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let src = input.data();
    let mut values = Vec::with_capacity(c * oh * ow);
    let mut indices = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..oh {
            let rows = geom.span(y, 0, h);
            for x in 0..ow {
                let cols = geom.span(x, 1, w);
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = base + rows.start * w + cols.start;
                for iy in rows.clone() {
                    for ix in cols.clone() {
                        let idx = base + iy * w + ix;
                        if src[idx] > best {
                            best = src[idx];
                            best_idx = idx;
                        }
                    }
                }
                values.push(src[best_idx]);
                indices.push(best_idx);
            }
        }
    }
    let mask = PoolMask {
        indices,
        output_shape: out_shape.clone(),
        input_shape: input.shape().to_vec(),
    };
    Ok((Tensor::new(out_shape, values)?, mask))
}

/// Scatter-adds `top` into a zero tensor of the pooled input's shape.
pub fn maxpool_backward(top: &Tensor, mask: &PoolMask) -> Result<Tensor> {
    if top.shape() != mask.output_shape.as_slice() {
        return Err(Error::shape(format!(
            "pool mask covers {:?}, signal is {:?}",
            mask.output_shape,
            top.shape()
        )));
    }
    let mut out = Tensor::zeros(&mask.input_shape);
    let dst = out.data_mut();
    for (&idx, &v) in mask.indices.iter().zip(top.data()) {
        dst[idx] += v;
    }
    Ok(out)
}

/// Average pooling with a fixed divisor of kH·kW; padded taps count as zeros.
pub fn avgpool_forward(input: &Tensor, geom: &PoolGeometry) -> Result<Tensor> {
    let out_shape = geom.output_shape(input.shape())?;
    let (c, h, w) = input.dims3()?;
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let src = input.data();
    let div = geom.divisor();
    let mut values = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for y in 0..oh {
            let rows = geom.span(y, 0, h);
            for x in 0..ow {
                let cols = geom.span(x, 1, w);
                let mut acc = 0.0;
                for iy in rows.clone() {
                    acc += plane[iy * w + cols.start..iy * w + cols.end].iter().sum::<f64>();
                }
                values.push(acc / div);
            }
        }
    }
    Tensor::new(out_shape, values)
}

/// Adjoint of [`avgpool_forward`].
pub fn avgpool_backward_data(grad: &Tensor, geom: &PoolGeometry, input_shape: &[usize]) -> Result<Tensor> {
    let out_shape = geom.output_shape(input_shape)?;
    if grad.shape() != out_shape.as_slice() {
        return Err(Error::shape(format!(
            "avgpool backward expects {:?}, got {:?}",
            out_shape,
            grad.shape()
        )));
    }
    let (c, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let div = geom.divisor();
    let g = grad.data();
    let mut out = Tensor::zeros(input_shape);
    let dst = out.data_mut();
    for ch in 0..c {
        let plane = &mut dst[ch * h * w..(ch + 1) * h * w];
        for y in 0..oh {
            let rows = geom.span(y, 0, h);
            for x in 0..ow {
                let v = g[(ch * oh + y) * ow + x] / div;
                let cols = geom.span(x, 1, w);
                for iy in rows.clone() {
                    plane[iy * w + cols.start..iy * w + cols.end]
                        .iter_mut()
                        .for_each(|acc| *acc += v);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn geom(k: usize, s: usize, p: usize) -> PoolGeometry {
        PoolGeometry::new((k, k), (s, s), (p, p)).unwrap()
    }

    /// Per-window scan over explicit (possibly padded) coordinates.
    fn naive_pool(input: &Tensor, g: &PoolGeometry, max: bool) -> (Vec<f64>, Vec<usize>) {
        let (c, h, w) = input.dims3().unwrap();
        let oh = (h + 2 * g.padding.0 - g.window.0) / g.stride.0 + 1;
        let ow = (w + 2 * g.padding.1 - g.window.1) / g.stride.1 + 1;
        let (mut vals, mut idxs) = (vec![], vec![]);
        for ch in 0..c {
            for y in 0..oh {
                for x in 0..ow {
                    let mut best = (f64::NEG_INFINITY, usize::MAX);
                    let mut sum = 0.0;
                    for i in 0..g.window.0 {
                        for j in 0..g.window.1 {
                            let iy = (y * g.stride.0 + i) as isize - g.padding.0 as isize;
                            let ix = (x * g.stride.1 + j) as isize - g.padding.1 as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            let idx = (ch * h + iy as usize) * w + ix as usize;
                            let v = input.data()[idx];
                            sum += v;
                            if v > best.0 || (v == best.0 && idx < best.1) {
                                best = (v, idx);
                            }
                        }
                    }
                    if max {
                        vals.push(best.0);
                        idxs.push(best.1);
                    } else {
                        vals.push(sum / (g.window.0 * g.window.1) as f64);
                    }
                }
            }
        }
        (vals, idxs)
    }

    #[test]
    fn max_simple_and_ties() {
        let t = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (v, m) = maxpool_forward(&t, &geom(2, 2, 0)).unwrap();
        assert_eq!(v.data(), &[4.0]);
        assert_eq!(m.indices, vec![3]);

        let t = Tensor::full(&[1, 2, 2], 5.0);
        let (v, m) = maxpool_forward(&t, &geom(2, 2, 0)).unwrap();
        assert_eq!(v.data(), &[5.0]);
        assert_eq!(m.indices, vec![0]);
    }

    #[test]
    fn max_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = Tensor::from_fn(&[2, 6, 6], |_| rng.random_range(-1.0..1.0));
        let (v, m) = maxpool_forward(&t, &geom(2, 2, 0)).unwrap();
        let (nv, ni) = naive_pool(&t, &geom(2, 2, 0), true);
        assert_eq!(v.data(), nv.as_slice());
        assert_eq!(m.indices, ni);

        // overlapping, padded, and quantized (to force ties)
        let t = Tensor::from_fn(&[3, 7, 5], |_| rng.random_range(0..3) as f64);
        let g = geom(3, 2, 1);
        let (v, m) = maxpool_forward(&t, &g).unwrap();
        let (nv, ni) = naive_pool(&t, &g, true);
        assert_eq!(v.data(), nv.as_slice());
        assert_eq!(m.indices, ni);
    }

    #[test]
    fn max_backward_scatters() {
        let t = Tensor::new(vec![1, 2, 4], vec![1.0, 9.0, 0.0, 2.0, 3.0, 4.0, 8.0, 1.0]).unwrap();
        let (_, m) = maxpool_forward(&t, &geom(2, 2, 0)).unwrap();
        let top = Tensor::new(vec![1, 1, 2], vec![0.25, 0.75]).unwrap();
        let back = maxpool_backward(&top, &m).unwrap();
        assert_eq!(back.data(), &[0.0, 0.25, 0.0, 0.0, 0.0, 0.0, 0.75, 0.0]);

        // overlapping windows choosing the same index accumulate
        let t = Tensor::new(vec![1, 1, 3], vec![0.0, 5.0, 0.0]).unwrap();
        let g = PoolGeometry::new((1, 2), (1, 1), (0, 0)).unwrap();
        let (_, m) = maxpool_forward(&t, &g).unwrap();
        assert_eq!(m.indices, vec![1, 1]);
        let top = Tensor::new(vec![1, 1, 2], vec![0.5, 0.25]).unwrap();
        assert_eq!(maxpool_backward(&top, &m).unwrap().data(), &[0.0, 0.75, 0.0]);

        assert!(maxpool_backward(&Tensor::zeros(&[1, 2, 2]), &m).is_err());
    }

    #[test]
    fn avg_cases() {
        let t = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(avgpool_forward(&t, &geom(2, 2, 0)).unwrap().data(), &[2.5]);

        let c = Tensor::full(&[2, 6, 6], 1.75);
        let out = avgpool_forward(&c, &geom(3, 1, 0)).unwrap();
        assert!(out.data().iter().all(|&v| (v - 1.75).abs() < 1e-15));

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = Tensor::from_fn(&[2, 7, 6], |_| rng.random_range(-1.0..1.0));
        let g = geom(3, 2, 1);
        let out = avgpool_forward(&t, &g).unwrap();
        let (nv, _) = naive_pool(&t, &g, false);
        for (a, b) in out.data().iter().zip(&nv) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn avg_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let g = geom(3, 2, 1);
        let x = Tensor::from_fn(&[2, 7, 6], |_| rng.random_range(-1.0..1.0));
        let y = avgpool_forward(&x, &g).unwrap();
        let d = Tensor::from_fn(y.shape(), |_| rng.random_range(-1.0..1.0));
        let lhs = y.dot(&d).unwrap();
        let rhs = x.dot(&avgpool_backward_data(&d, &g, x.shape()).unwrap()).unwrap();
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(PoolGeometry::new((2, 2), (0, 1), (0, 0)).is_err());
        assert!(PoolGeometry::new((2, 2), (1, 1), (2, 0)).is_err());
        let t = Tensor::zeros(&[1, 2, 2]);
        assert!(maxpool_forward(&t, &geom(3, 1, 0)).is_err());
    }
}
