use super::MwpField;
use crate::error::{Error, Result};
use crate::tensor::{bicubic_resize, channel_sum, Tensor};

/// A non-negative 1×H×W map.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub values: Tensor,
    pub source_layer: String,
    pub signal_descriptor: String,
}

impl AttentionMap {
    pub fn new(values: Tensor, source_layer: impl Into<String>, signal_descriptor: impl Into<String>) -> Result<Self> {
        let (c, _, _) = values.dims3()?;
        if c != 1 {
            return Err(Error::shape(format!(
                "attention map must be single-channel, got {:?}",
                values.shape()
            )));
        }
        if let Some(&bad) = values.data().iter().find(|v| v.is_nan() || **v < 0.0) {
            return Err(Error::InvalidArgument(format!("attention map value {bad} is negative")));
        }
        let (_, h, w) = values.dims3()?;
        Ok(Self {
            values: values.reshape(&[1, h, w])?,
            source_layer: source_layer.into(),
            signal_descriptor: signal_descriptor.into(),
        })
    }

    pub fn height(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values.data()[y * self.width() + x]
    }
}

/// Sums the field over channels and resamples it to `out_extents`
/// (height, width), clamping resampling undershoot at zero.
pub fn mwp_to_attention_map(field: &MwpField, out_extents: (usize, usize)) -> Result<AttentionMap> {
    if let Some(&bad) = field.values.data().iter().find(|v| v.is_nan() || **v < 0.0) {
        return Err(Error::InvalidArgument(format!("MWP value {bad} is negative")));
    }
    let summed = channel_sum(&field.values)?;
    let (_, h, w) = summed.dims3()?;
    let values = if (h, w) == out_extents {
        summed
    } else {
        bicubic_resize(&summed, out_extents.0, out_extents.1, true)?
    };
    AttentionMap::new(values, field.layer_id.clone(), String::new())
}

/// Weighted arithmetic mean of equally sized maps.
pub fn combine_maps(maps: &[AttentionMap], weights: &[f64]) -> Result<AttentionMap> {
    if maps.is_empty() || maps.len() != weights.len() {
        return Err(Error::InvalidArgument(format!(
            "{} maps with {} weights",
            maps.len(),
            weights.len()
        )));
    }
    if let Some(&w) = weights.iter().find(|w| w.is_nan() || **w < 0.0) {
        return Err(Error::NegativeWeight(w));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument("map weights sum to zero".into()));
    }
    let mut acc = Tensor::zeros(maps[0].values.shape());
    for (m, &w) in maps.iter().zip(weights) {
        acc.add_assign(&m.values.scale(w / total))?;
    }
    let descriptor = maps
        .iter()
        .map(|m| m.signal_descriptor.as_str())
        .collect::<Vec<_>>()
        .join("+");
    AttentionMap::new(acc, maps[0].source_layer.clone(), descriptor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn field(values: Tensor) -> MwpField {
        MwpField {
            layer_id: "pool".into(),
            values,
        }
    }

    #[test]
    fn same_extent_is_unchanged() {
        let v = Tensor::from_fn(&[1, 4, 5], |i| i as f64 * 0.1);
        let m = mwp_to_attention_map(&field(v.clone()), (4, 5)).unwrap();
        assert_eq!(m.values, v);
    }

    #[test]
    fn constant_field_scales_by_channels() {
        let m = mwp_to_attention_map(&field(Tensor::full(&[3, 4, 4], 0.25)), (9, 13)).unwrap();
        assert!(m.values.data().iter().all(|&v| (v - 0.75).abs() < 1e-12));
    }

    #[test]
    fn smooth_field_keeps_mean_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let (c, h, w) = (3, 6, 8);
            let phase: Vec<f64> = (0..c).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
            let v = Tensor::from_fn(&[c, h, w], |i| {
                let ch = i / (h * w);
                let (y, x) = ((i / w) % h, i % w);
                1.2 + (0.4 * y as f64 + phase[ch]).sin() * (0.3 * x as f64).cos()
            });
            let summed = channel_sum(&v).unwrap();
            assert!((summed.sum() - v.sum()).abs() < 1e-9);
            let (oh, ow) = (48, 64);
            let m = mwp_to_attention_map(&field(v.clone()), (oh, ow)).unwrap();
            let scaled = m.values.sum() * (h * w) as f64 / (oh * ow) as f64;
            assert!((scaled / summed.sum() - 1.0).abs() < 0.02);
        }
    }

    #[test]
    fn rejects_negative_fields() {
        let v = Tensor::new(vec![1, 1, 2], vec![0.5, -0.1]).unwrap();
        assert!(mwp_to_attention_map(&field(v), (1, 2)).is_err());
    }

    #[test]
    fn combine_cases() {
        let a = AttentionMap::new(Tensor::from_fn(&[1, 3, 3], |i| i as f64), "l", "a").unwrap();
        let zero = AttentionMap::new(Tensor::zeros(&[1, 3, 3]), "l", "z").unwrap();
        assert_eq!(combine_maps(std::slice::from_ref(&a), &[1.0]).unwrap().values, a.values);
        assert_eq!(
            combine_maps(&[a.clone(), a.clone()], &[1.0, 1.0]).unwrap().values,
            a.values
        );
        assert_eq!(
            combine_maps(&[a.clone(), zero.clone()], &[1.0, 1.0]).unwrap().values,
            a.values.scale(0.5)
        );
        assert!(combine_maps(&[a.clone(), zero], &[1.0, -1.0]).is_err());
        let small = AttentionMap::new(Tensor::zeros(&[1, 2, 3]), "l", "s").unwrap();
        assert!(combine_maps(&[a, small], &[1.0, 1.0]).is_err());
    }
}
