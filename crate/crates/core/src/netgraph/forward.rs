use super::{LayerKind, ModelBundle};
use crate::error::{Error, Result};
use crate::tensor::{avgpool_forward, conv2d_forward, linear_forward, lrn_forward, maxpool_forward, PoolMask, Tensor};

/// Every layer's forward response, kept for the top-down sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationCache {
    ids: Vec<String>,
    responses: Vec<Tensor>,
    masks: Vec<Option<PoolMask>>,
    pub input_shape: Vec<usize>,
}

impl ActivationCache {
    pub fn from_parts(
        ids: Vec<String>,
        responses: Vec<Tensor>,
        masks: Vec<Option<PoolMask>>,
        input_shape: Vec<usize>,
    ) -> Result<Self> {
        if ids.len() != responses.len() || ids.len() != masks.len() {
            return Err(Error::shape("cache parts have different lengths"));
        }
        Ok(Self {
            ids,
            responses,
            masks,
            input_shape,
        })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn responses(&self) -> &[Tensor] {
        &self.responses
    }

    pub fn masks(&self) -> &[Option<PoolMask>] {
        &self.masks
    }

    pub fn response_at(&self, pos: usize) -> &Tensor {
        &self.responses[pos]
    }

    pub fn mask_at(&self, pos: usize) -> Option<&PoolMask> {
        self.masks[pos].as_ref()
    }

    pub fn response(&self, id: &str) -> Result<&Tensor> {
        self.ids
            .iter()
            .position(|i| i == id)
            .map(|p| &self.responses[p])
            .ok_or_else(|| Error::UnknownLayer(id.to_string()))
    }

    /// Checks that this cache was produced by `model`.
    pub fn check_model(&self, model: &ModelBundle) -> Result<()> {
        let same =
            self.ids.len() == model.layers().len() && self.ids.iter().zip(model.layers()).all(|(a, l)| a == l.id());
        if same {
            Ok(())
        } else {
            Err(Error::InvalidArgument(
                "activation cache belongs to a different model".into(),
            ))
        }
    }
}

/// Runs every layer in topological order and records the responses and
/// max-pool masks.
pub fn forward(model: &ModelBundle, image: &Tensor) -> Result<ActivationCache> {
    let input = model.input_layer();
    let LayerKind::Input { shape, flexible } = input.kind() else {
        unreachable!("input layer has input kind");
    };
    let (c, h, w) = image.dims3().map_err(|e| e.at_layer(input.id()))?;
    if c != shape[0] || (!flexible && (h, w) != (shape[1], shape[2])) {
        return Err(Error::shape(format!("image is {c}×{h}×{w}, model expects {shape:?}")).at_layer(input.id()));
    }

    let n = model.layers().len();
    let mut responses: Vec<Tensor> = Vec::with_capacity(n);
    let mut masks = Vec::with_capacity(n);
    for layer in model.layers() {
        let args: Vec<&Tensor> = layer.inputs.iter().map(|&p| &responses[p]).collect();
        let mut mask = None;
        let out = match layer.kind() {
            LayerKind::Input { .. } => image.clone().reshape(&[c, h, w]),
            LayerKind::Conv(p) => conv2d_forward(args[0], p),
            LayerKind::Fc(p) => linear_forward(args[0], p),
            LayerKind::Relu => Ok(args[0].map(|v| v.max(0.0))),
            LayerKind::MaxPool(g) => maxpool_forward(args[0], g).map(|(t, m)| {
                mask = Some(m);
                t
            }),
            LayerKind::AvgPool(g) => avgpool_forward(args[0], g),
            LayerKind::Lrn(p) => lrn_forward(args[0], p),
            LayerKind::Concat => concat_channels(&args),
            LayerKind::Flatten => {
                let n = args[0].len();
                args[0].clone().reshape(&[n, 1, 1])
            }
            LayerKind::Softmax => softmax_channels(args[0]),
            LayerKind::Dropout => Ok(args[0].clone()),
        }
        .map_err(|e| e.at_layer(layer.id()))?;
        responses.push(out);
        masks.push(mask);
    }

    Ok(ActivationCache {
        ids: model.layers().iter().map(|l| l.id().to_string()).collect(),
        responses,
        masks,
        input_shape: vec![c, h, w],
    })
}

fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let (_, h, w) = parts[0].dims3()?;
    let mut channels = 0;
    let mut data = Vec::new();
    for p in parts {
        let (c, ph, pw) = p.dims3()?;
        if (ph, pw) != (h, w) {
            return Err(Error::shape(format!("concat of {h}×{w} and {ph}×{pw}")));
        }
        channels += c;
        data.extend_from_slice(p.data());
    }
    Tensor::new(vec![channels, h, w], data)
}

/// Softmax across channels at each spatial position.
fn softmax_channels(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    let plane = h * w;
    let src = x.data();
    let mut out = x.clone();
    let dst = out.data_mut();
    for px in 0..plane {
        let peak = (0..c).map(|ch| src[ch * plane + px]).fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = (0..c).map(|ch| (src[ch * plane + px] - peak).exp()).sum();
        for ch in 0..c {
            dst[ch * plane + px] = (src[ch * plane + px] - peak).exp() / total;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::{LayerSpec, ModelMeta};
    use crate::tensor::{ConvParams, PoolGeometry};

    fn identity_net() -> ModelBundle {
        let specs = vec![
            LayerSpec::new(
                "data",
                LayerKind::Input {
                    shape: [1, 3, 3],
                    flexible: false,
                },
                &[],
            ),
            LayerSpec::new(
                "conv",
                LayerKind::Conv(ConvParams::new(Tensor::full(&[1, 1, 1, 1], 1.0), (1, 1), (0, 0), None).unwrap()),
                &["data"],
            ),
            LayerSpec::new("relu", LayerKind::Relu, &["conv"]),
            LayerSpec::new("drop", LayerKind::Dropout, &["relu"]),
            LayerSpec::new("prob", LayerKind::Softmax, &["drop"]),
        ];
        ModelBundle::new(specs, "drop", ModelMeta::default()).unwrap()
    }

    #[test]
    fn identity_conv_relu() {
        let m = identity_net();
        let img = Tensor::from_fn(&[1, 3, 3], |i| i as f64 * 0.5);
        let cache = forward(&m, &img).unwrap();
        assert_eq!(cache.response("conv").unwrap(), &img);
        assert_eq!(cache.response("relu").unwrap(), &img);
        assert_eq!(cache.response("drop").unwrap(), &img);
        let p = cache.response("prob").unwrap();
        assert!(p.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn relu_zeroes_negatives() {
        let m = identity_net();
        let img = Tensor::new(vec![1, 3, 3], vec![1.0, -1.0, 2.0, 0.0, 3.0, -4.0, 5.0, 6.0, 7.0]).unwrap();
        let cache = forward(&m, &img).unwrap();
        let r = cache.response("relu").unwrap();
        assert_eq!(r.data()[1], 0.0);
        assert_eq!(r.data()[5], 0.0);
        assert_eq!(r.data()[2], 2.0);
    }

    #[test]
    fn wrong_image_shape_names_layer() {
        let m = identity_net();
        let err = forward(&m, &Tensor::zeros(&[1, 4, 3])).unwrap_err();
        assert!(matches!(err, Error::AtLayer { ref layer, .. } if layer == "data"));
    }

    #[test]
    fn flexible_input_accepts_any_extent() {
        let specs = vec![
            LayerSpec::new(
                "data",
                LayerKind::Input {
                    shape: [1, 4, 4],
                    flexible: true,
                },
                &[],
            ),
            LayerSpec::new(
                "pool",
                LayerKind::MaxPool(PoolGeometry::new((2, 2), (2, 2), (0, 0)).unwrap()),
                &["data"],
            ),
        ];
        let m = ModelBundle::new(specs, "pool", ModelMeta::default()).unwrap();
        let cache = forward(&m, &Tensor::zeros(&[1, 6, 8])).unwrap();
        assert_eq!(cache.response("pool").unwrap().shape(), &[1, 3, 4]);
    }
}
