use super::{window_extent, Tensor};
use crate::error::{Error, Result};

/// Convolution weights and geometry. `kernel` is out × in × kH × kW.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub kernel: Tensor,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub bias: Option<Tensor>,
}

impl ConvParams {
    pub fn new(kernel: Tensor, stride: (usize, usize), padding: (usize, usize), bias: Option<Tensor>) -> Result<Self> {
        if kernel.shape().len() != 4 {
            return Err(Error::shape(format!(
                "conv kernel must be 4-d, got {:?}",
                kernel.shape()
            )));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::shape("conv stride must be positive"));
        }
        if let Some(b) = &bias {
            if b.len() != kernel.shape()[0] {
                return Err(Error::shape(format!(
                    "bias has {} entries for {} output channels",
                    b.len(),
                    kernel.shape()[0]
                )));
            }
        }
        Ok(Self {
            kernel,
            stride,
            padding,
            bias,
        })
    }

    /// (out, in, kH, kW)
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        let s = self.kernel.shape();
        (s[0], s[1], s[2], s[3])
    }

    pub fn output_shape(&self, input_shape: &[usize]) -> Result<Vec<usize>> {
        let (o, ci, kh, kw) = self.dims();
        let [c, h, w] = *input_shape else {
            return Err(Error::shape(format!("conv input must be C×H×W, got {input_shape:?}")));
        };
        if c != ci {
            return Err(Error::shape(format!("conv expects {ci} input channels, got {c}")));
        }
        let oh = window_extent(h, kh, self.stride.0, self.padding.0)?;
        let ow = window_extent(w, kw, self.stride.1, self.padding.1)?;
        Ok(vec![o, oh, ow])
    }

    /// Same geometry with `max(w, 0)` weights and no bias.
    pub fn excitatory(&self) -> ConvParams {
        ConvParams {
            kernel: self.kernel.map(|w| w.max(0.0)),
            stride: self.stride,
            padding: self.padding,
            bias: None,
        }
    }

    pub fn negated(&self) -> ConvParams {
        ConvParams {
            kernel: self.kernel.map(|w| -w),
            stride: self.stride,
            padding: self.padding,
            bias: self.bias.as_ref().map(|b| b.map(|v| -v)),
        }
    }
}

/// Output indices `y` with `y·stride + tap − pad` inside `[0, input)`.
fn valid_range(out: usize, input: usize, tap: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > tap { (pad - tap).div_ceil(stride) } else { 0 };
    let reach = input + pad;
    if reach <= tap {
        return (0, 0);
    }
    let hi = ((reach - tap - 1) / stride + 1).min(out);
    (lo.min(hi), hi)
}

pub fn conv2d_forward(input: &Tensor, params: &ConvParams) -> Result<Tensor> {
    let out_shape = params.output_shape(input.shape())?;
    let (oc, ic, kh, kw) = params.dims();
    let (_, h, w) = input.dims3()?;
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let (sh, sw) = params.stride;
    let (ph, pw) = params.padding;
    let kernel = params.kernel.data();
    let src = input.data();

    let mut out = Tensor::zeros(&out_shape);
    let dst = out.data_mut();
    for o in 0..oc {
        let plane = &mut dst[o * oh * ow..(o + 1) * oh * ow];
        if let Some(b) = &params.bias {
            plane.fill(b.data()[o]);
        }
        for c in 0..ic {
            let in_plane = &src[c * h * w..(c + 1) * h * w];
            for i in 0..kh {
                let (y0, y1) = valid_range(oh, h, i, sh, ph);
                for j in 0..kw {
                    let k = kernel[((o * ic + c) * kh + i) * kw + j];
                    if k == 0.0 {
                        continue;
                    }
                    let (x0, x1) = valid_range(ow, w, j, sw, pw);
                    if x0 >= x1 {
                        continue;
                    }
                    for y in y0..y1 {
                        let iy = y * sh + i - ph;
                        let row_in = &in_plane[iy * w..(iy + 1) * w];
                        let row_out = &mut plane[y * ow + x0..y * ow + x1];
                        if sw == 1 {
                            let start = x0 + j - pw;
                            let seg = &row_in[start..start + (x1 - x0)];
                            row_out.iter_mut().zip(seg).for_each(|(acc, &v)| *acc += k * v);
                        } else {
                            for (n, acc) in row_out.iter_mut().enumerate() {
                                *acc += k * row_in[(x0 + n) * sw + j - pw];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`conv2d_forward`] with the bias dropped: scatters `grad`
/// (shaped like the conv output) back onto an input of `input_shape`.
pub fn conv2d_backward_data(grad: &Tensor, params: &ConvParams, input_shape: &[usize]) -> Result<Tensor> {
    let out_shape = params.output_shape(input_shape)?;
    if grad.shape() != out_shape.as_slice() {
        return Err(Error::shape(format!(
            "conv backward expects {:?}, got {:?}",
            out_shape,
            grad.shape()
        )));
    }
    let (oc, ic, kh, kw) = params.dims();
    let (h, w) = (input_shape[1], input_shape[2]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let (sh, sw) = params.stride;
    let (ph, pw) = params.padding;
    let kernel = params.kernel.data();
    let g = grad.data();

    let mut out = Tensor::zeros(input_shape);
    let dst = out.data_mut();
    for o in 0..oc {
        let g_plane = &g[o * oh * ow..(o + 1) * oh * ow];
        for c in 0..ic {
            let in_plane = &mut dst[c * h * w..(c + 1) * h * w];
            for i in 0..kh {
                let (y0, y1) = valid_range(oh, h, i, sh, ph);
                for j in 0..kw {
                    let k = kernel[((o * ic + c) * kh + i) * kw + j];
                    if k == 0.0 {
                        continue;
                    }
                    let (x0, x1) = valid_range(ow, w, j, sw, pw);
                    if x0 >= x1 {
                        continue;
                    }
                    for y in y0..y1 {
                        let iy = y * sh + i - ph;
                        let row_in = &mut in_plane[iy * w..(iy + 1) * w];
                        let row_g = &g_plane[y * ow + x0..y * ow + x1];
                        if sw == 1 {
                            let start = x0 + j - pw;
                            let seg = &mut row_in[start..start + (x1 - x0)];
                            seg.iter_mut().zip(row_g).for_each(|(acc, &v)| *acc += k * v);
                        } else {
                            for (n, &v) in row_g.iter().enumerate() {
                                row_in[(x0 + n) * sw + j - pw] += k * v;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Fully-connected weights: `weight` is out × in over the flattened input.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl LinearParams {
    pub fn new(weight: Tensor, bias: Option<Tensor>) -> Result<Self> {
        if weight.shape().len() != 2 {
            return Err(Error::shape(format!("fc weight must be 2-d, got {:?}", weight.shape())));
        }
        if let Some(b) = &bias {
            if b.len() != weight.shape()[0] {
                return Err(Error::shape(format!(
                    "bias has {} entries for {} outputs",
                    b.len(),
                    weight.shape()[0]
                )));
            }
        }
        Ok(Self { weight, bias })
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn output_shape(&self, input_shape: &[usize]) -> Result<Vec<usize>> {
        let n: usize = input_shape.iter().product();
        if n != self.in_features() {
            return Err(Error::shape(format!(
                "fc expects {} inputs, got {n} from {input_shape:?}",
                self.in_features()
            )));
        }
        Ok(vec![self.out_features(), 1, 1])
    }

    pub fn excitatory(&self) -> LinearParams {
        LinearParams {
            weight: self.weight.map(|w| w.max(0.0)),
            bias: None,
        }
    }

    pub fn negated(&self) -> LinearParams {
        LinearParams {
            weight: self.weight.map(|w| -w),
            bias: self.bias.as_ref().map(|b| b.map(|v| -v)),
        }
    }
}

/// `W·x + b` over the flattened input; the result is out × 1 × 1.
pub fn linear_forward(input: &Tensor, params: &LinearParams) -> Result<Tensor> {
    let out_shape = params.output_shape(input.shape())?;
    let n = params.in_features();
    let x = input.data();
    let out: Vec<f64> = params
        .weight
        .data()
        .chunks_exact(n)
        .enumerate()
        .map(|(o, row)| {
            let b = params.bias.as_ref().map_or(0.0, |b| b.data()[o]);
            b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
        })
        .collect();
    Tensor::new(out_shape, out)
}

/// `Wᵀ·g`, reshaped to `input_shape`.
pub fn linear_backward_data(grad: &Tensor, params: &LinearParams, input_shape: &[usize]) -> Result<Tensor> {
    params.output_shape(input_shape)?;
    if grad.len() != params.out_features() {
        return Err(Error::shape(format!(
            "fc backward expects {} values, got {}",
            params.out_features(),
            grad.len()
        )));
    }
    let n = params.in_features();
    let mut out = vec![0.0; n];
    for (row, &g) in params.weight.data().chunks_exact(n).zip(grad.data()) {
        if g == 0.0 {
            continue;
        }
        out.iter_mut().zip(row).for_each(|(acc, w)| *acc += w * g);
    }
    Tensor::new(input_shape.to_vec(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    fn naive_conv(input: &Tensor, p: &ConvParams) -> Tensor {
        let (oc, ic, kh, kw) = p.dims();
        let (_, h, w) = input.dims3().unwrap();
        let oh = (h + 2 * p.padding.0 - kh) / p.stride.0 + 1;
        let ow = (w + 2 * p.padding.1 - kw) / p.stride.1 + 1;
        let mut out = Tensor::zeros(&[oc, oh, ow]);
        for o in 0..oc {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = p.bias.as_ref().map_or(0.0, |b| b.data()[o]);
                    for c in 0..ic {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (y * p.stride.0 + i) as isize - p.padding.0 as isize;
                                let ix = (x * p.stride.1 + j) as isize - p.padding.1 as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += p.kernel.data()[((o * ic + c) * kh + i) * kw + j]
                                    * input.data()[(c * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                    out.data_mut()[(o * oh + y) * ow + x] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel() {
        let input = Tensor::full(&[1, 3, 3], 1.0);
        let p = ConvParams::new(Tensor::full(&[1, 1, 1, 1], 1.0), (1, 1), (0, 0), None).unwrap();
        assert_eq!(conv2d_forward(&input, &p).unwrap(), input);
    }

    #[test]
    fn full_window_sum() {
        let input = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = ConvParams::new(Tensor::full(&[1, 1, 2, 2], 1.0), (1, 1), (0, 0), None).unwrap();
        let out = conv2d_forward(&input, &p).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1]);
        assert_eq!(out.data(), &[10.0]);
    }

    #[test]
    fn matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let input = random(&[3, 8, 8], &mut rng);
        let p = ConvParams::new(
            random(&[4, 3, 3, 3], &mut rng),
            (2, 2),
            (1, 1),
            Some(random(&[4], &mut rng)),
        )
        .unwrap();
        let fast = conv2d_forward(&input, &p).unwrap();
        let slow = naive_conv(&input, &p);
        assert_eq!(fast.shape(), &[4, 4, 4]);
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
        }
        // odd geometries: asymmetric stride, padding wider than the stride
        for &(stride, pad, k) in &[
            ((1, 3), (2, 0), (3, 2)),
            ((3, 1), (0, 2), (2, 5)),
            ((2, 2), (3, 3), (4, 4)),
        ] {
            let input = random(&[2, 7, 9], &mut rng);
            let p = ConvParams::new(random(&[3, 2, k.0, k.1], &mut rng), stride, pad, None).unwrap();
            let fast = conv2d_forward(&input, &p).unwrap();
            let slow = naive_conv(&input, &p);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn shape_errors() {
        let input = Tensor::zeros(&[2, 4, 4]);
        let p = ConvParams::new(Tensor::zeros(&[1, 3, 3, 3]), (1, 1), (0, 0), None).unwrap();
        assert!(matches!(conv2d_forward(&input, &p), Err(Error::ShapeMismatch(_))));
        let p = ConvParams::new(Tensor::zeros(&[1, 2, 5, 5]), (1, 1), (0, 0), None).unwrap();
        assert!(conv2d_forward(&input, &p).is_err());
        assert!(ConvParams::new(Tensor::zeros(&[1, 2, 5]), (1, 1), (0, 0), None).is_err());
        assert!(ConvParams::new(Tensor::zeros(&[1, 2, 1, 1]), (0, 1), (0, 0), None).is_err());
    }

    #[test]
    fn backward_identity_and_zero() {
        let p = ConvParams::new(Tensor::full(&[1, 1, 1, 1], 1.0), (1, 1), (0, 0), None).unwrap();
        let g = Tensor::from_fn(&[1, 4, 3], |i| i as f64 - 5.0);
        assert_eq!(conv2d_backward_data(&g, &p, &[1, 4, 3]).unwrap(), g);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = ConvParams::new(random(&[4, 3, 3, 3], &mut rng), (2, 2), (1, 1), None).unwrap();
        let z = conv2d_backward_data(&Tensor::zeros(&[4, 4, 4]), &p, &[3, 8, 8]).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        assert!(conv2d_backward_data(&Tensor::zeros(&[4, 3, 4]), &p, &[3, 8, 8]).is_err());
    }

    #[test]
    fn adjoint_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let c = rng.random_range(1..4);
            let o = rng.random_range(1..5);
            let h = rng.random_range(4..10);
            let w = rng.random_range(4..10);
            let k = (rng.random_range(1..4), rng.random_range(1..4));
            let s = (rng.random_range(1..3), rng.random_range(1..3));
            let pad = (rng.random_range(0..2), rng.random_range(0..2));
            let p = ConvParams::new(random(&[o, c, k.0, k.1], &mut rng), s, pad, None).unwrap();
            let x = random(&[c, h, w], &mut rng);
            let y = conv2d_forward(&x, &p).unwrap();
            let g = random(y.shape(), &mut rng);
            let lhs = y.dot(&g).unwrap();
            let rhs = x.dot(&conv2d_backward_data(&g, &p, x.shape()).unwrap()).unwrap();
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn linear_adjoint_and_values() {
        let p = LinearParams::new(
            Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0]).unwrap(),
            Some(Tensor::new(vec![2], vec![0.5, -0.5]).unwrap()),
        )
        .unwrap();
        let x = Tensor::new(vec![3, 1, 1], vec![1.0, 1.0, 2.0]).unwrap();
        let y = linear_forward(&x, &p).unwrap();
        assert_eq!(y.shape(), &[2, 1, 1]);
        assert_eq!(y.data(), &[9.5, 0.5]);
        let g = Tensor::new(vec![2, 1, 1], vec![1.0, 2.0]).unwrap();
        let back = linear_backward_data(&g, &p, &[3, 1, 1]).unwrap();
        assert_eq!(back.data(), &[-1.0, 2.0, 5.0]);
    }
}
