use super::Tensor;
use crate::error::{Error, Result};

/// Across-channel local response normalization parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrnParams {
    pub local_size: usize,
    pub alpha: f64,
    pub beta: f64,
    pub k: f64,
}

impl LrnParams {
    pub fn new(local_size: usize, alpha: f64, beta: f64, k: f64) -> Result<Self> {
        if local_size == 0 || local_size.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "lrn local_size must be odd and positive, got {local_size}"
            )));
        }
        if k.is_nan() || k <= 0.0 {
            return Err(Error::InvalidArgument(format!("lrn k must be positive, got {k}")));
        }
        Ok(Self {
            local_size,
            alpha,
            beta,
            k,
        })
    }
}

/// `out = in · (k + alpha/n · Σ in²)^(−beta)`, the sum running over a window
/// of `n` neighbouring channels clipped at the channel boundaries.
pub fn lrn_forward(input: &Tensor, p: &LrnParams) -> Result<Tensor> {
    let (c, h, w) = input.dims3()?;
    let plane = h * w;
    let half = p.local_size / 2;
    let src = input.data();
    let squares: Vec<f64> = src.iter().map(|v| v * v).collect();
    let scale = p.alpha / p.local_size as f64;
    let mut out = input.clone();
    let dst = out.data_mut();
    for ch in 0..c {
        let lo = ch.saturating_sub(half);
        let hi = (ch + half).min(c - 1);
        for px in 0..plane {
            let acc: f64 = (lo..=hi).map(|n| squares[n * plane + px]).sum();
            dst[ch * plane + px] *= (p.k + scale * acc).powf(-p.beta);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn alpha_zero_is_pure_scale() {
        let t = Tensor::from_fn(&[3, 2, 2], |i| i as f64 - 4.0);
        let p = LrnParams::new(3, 0.0, 0.75, 1.0).unwrap();
        assert_eq!(lrn_forward(&t, &p).unwrap(), t);
        let p = LrnParams::new(3, 0.0, 0.5, 4.0).unwrap();
        assert_eq!(lrn_forward(&t, &p).unwrap(), t.scale(0.5));
    }

    #[test]
    fn closed_form() {
        let t = Tensor::full(&[1, 1, 1], 2.0);
        let p = LrnParams::new(1, 1.0, 1.0, 1.0).unwrap();
        assert!((lrn_forward(&t, &p).unwrap().data()[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn matches_direct_formula_and_keeps_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (c, h, w) = (7, 3, 4);
        let t = Tensor::from_fn(&[c, h, w], |_| rng.random_range(-2.0..2.0));
        let p = LrnParams::new(5, 1e-2, 0.75, 2.0).unwrap();
        let out = lrn_forward(&t, &p).unwrap();
        for ch in 0..c {
            for px in 0..h * w {
                let mut acc = 0.0;
                for n in 0..c {
                    if (n as isize - ch as isize).abs() <= 2 {
                        acc += t.data()[n * h * w + px].powi(2);
                    }
                }
                let x = t.data()[ch * h * w + px];
                let expect = x / (2.0 + 1e-2 / 5.0 * acc).powf(0.75);
                let got = out.data()[ch * h * w + px];
                assert!((got - expect).abs() <= 1e-12 * expect.abs().max(1.0));
                assert_eq!(got.signum(), x.signum());
            }
        }
    }

    #[test]
    fn rejects_bad_params() {
        assert!(LrnParams::new(4, 1.0, 1.0, 1.0).is_err());
        assert!(LrnParams::new(0, 1.0, 1.0, 1.0).is_err());
        assert!(LrnParams::new(3, 1.0, 1.0, 0.0).is_err());
    }
}
