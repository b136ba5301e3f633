//! Randomly initialized networks for tests, benchmarks and demos.

use rand::Rng;

use crate::netgraph::{LayerKind, LayerSpec, ModelBundle, ModelMeta};
use crate::tensor::{ConvParams, LinearParams, PoolGeometry, Tensor};

fn uniform(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

fn fc(rng: &mut impl Rng, out: usize, inp: usize) -> LayerKind {
    let scale = 1.0 / (inp as f64).sqrt();
    let w = uniform(rng, &[out, inp], -scale, 1.5 * scale);
    let b = uniform(rng, &[out], -0.1, 0.2);
    LayerKind::Fc(LinearParams::new(w, Some(b)).expect("valid fc"))
}

fn conv(rng: &mut impl Rng, out: usize, inp: usize, k: usize, stride: usize, pad: usize) -> LayerKind {
    let scale = 1.0 / ((inp * k * k) as f64).sqrt();
    let w = uniform(rng, &[out, inp, k, k], -scale, 1.5 * scale);
    let b = uniform(rng, &[out], -0.05, 0.1);
    LayerKind::Conv(ConvParams::new(w, (stride, stride), (pad, pad), Some(b)).expect("valid conv"))
}

fn input(c: usize, h: usize, w: usize) -> LayerSpec {
    LayerSpec::new(
        "data",
        LayerKind::Input {
            shape: [c, h, w],
            flexible: false,
        },
        &[],
    )
}

/// Random non-negative input for `model`.
pub fn random_input(rng: &mut impl Rng, model: &ModelBundle) -> Tensor {
    let shape = model.input_layer().output_shape.clone();
    uniform(rng, &shape, 0.0, 1.0)
}

/// ReLU perceptron `data → fc1 → relu1 → … → fcN` with mixed-sign weights
/// and biases. `widths[0]` is the input width, the last entry the number of
/// outputs. The output layer is the top `fcN`.
pub fn random_mlp(rng: &mut impl Rng, widths: &[usize]) -> ModelBundle {
    assert!(widths.len() >= 2, "need input and output widths");
    let mut specs = vec![input(widths[0], 1, 1)];
    let mut prev = "data".to_string();
    let n = widths.len() - 1;
    for i in 1..=n {
        let id = format!("fc{i}");
        specs.push(LayerSpec::new(&id, fc(rng, widths[i], widths[i - 1]), &[&prev]));
        prev = id;
        if i < n {
            let r = format!("relu{i}");
            specs.push(LayerSpec::new(&r, LayerKind::Relu, &[&prev]));
            prev = r;
        }
    }
    ModelBundle::new(specs, &prev, ModelMeta::default()).expect("valid mlp")
}

/// Two convolutions, a max pool and a classifier on a `c×size×size` input:
///
/// `conv1(3×3, pad 1) → relu → conv2(3×3) → relu → pool(2×2) → fc`
pub fn small_convnet(rng: &mut impl Rng, c: usize, size: usize, widths: (usize, usize), classes: usize) -> ModelBundle {
    let (w1, w2) = widths;
    let pooled = (size - 2) / 2;
    let specs = vec![
        input(c, size, size),
        LayerSpec::new("conv1", conv(rng, w1, c, 3, 1, 1), &["data"]),
        LayerSpec::new("relu1", LayerKind::Relu, &["conv1"]),
        LayerSpec::new("conv2", conv(rng, w2, w1, 3, 1, 0), &["relu1"]),
        LayerSpec::new("relu2", LayerKind::Relu, &["conv2"]),
        LayerSpec::new(
            "pool",
            LayerKind::MaxPool(PoolGeometry::new((2, 2), (2, 2), (0, 0)).expect("valid pool")),
            &["relu2"],
        ),
        LayerSpec::new("flat", LayerKind::Flatten, &["pool"]),
        LayerSpec::new("fc", fc(rng, classes, w2 * pooled * pooled), &["flat"]),
    ];
    ModelBundle::new(specs, "fc", ModelMeta::default()).expect("valid convnet")
}

/// A mid-size classifier on 3×64×64 inputs, roughly 38 million
/// multiply-adds per forward pass. Pooling layers are `pool1`–`pool3`.
pub fn mid_cnn(rng: &mut impl Rng) -> ModelBundle {
    let pool = || LayerKind::MaxPool(PoolGeometry::new((2, 2), (2, 2), (0, 0)).expect("valid pool"));
    let specs = vec![
        input(3, 64, 64),
        LayerSpec::new("conv1", conv(rng, 16, 3, 3, 1, 1), &["data"]),
        LayerSpec::new("relu1", LayerKind::Relu, &["conv1"]),
        LayerSpec::new("pool1", pool(), &["relu1"]),
        LayerSpec::new("conv2", conv(rng, 32, 16, 3, 1, 1), &["pool1"]),
        LayerSpec::new("relu2", LayerKind::Relu, &["conv2"]),
        LayerSpec::new("pool2", pool(), &["relu2"]),
        LayerSpec::new("conv3", conv(rng, 64, 32, 3, 1, 1), &["pool2"]),
        LayerSpec::new("relu3", LayerKind::Relu, &["conv3"]),
        LayerSpec::new("conv4", conv(rng, 64, 64, 3, 1, 1), &["relu3"]),
        LayerSpec::new("relu4", LayerKind::Relu, &["conv4"]),
        LayerSpec::new("pool3", pool(), &["relu4"]),
        LayerSpec::new("flat", LayerKind::Flatten, &["pool3"]),
        LayerSpec::new("fc5", fc(rng, 64, 64 * 8 * 8), &["flat"]),
        LayerSpec::new("relu5", LayerKind::Relu, &["fc5"]),
        LayerSpec::new("fc6", fc(rng, 10, 64), &["relu5"]),
    ];
    let meta = ModelMeta {
        attention_layer: Some("pool2".into()),
        ..ModelMeta::default()
    };
    ModelBundle::new(specs, "fc6", meta).expect("valid cnn")
}

/// Multiply-adds of one forward pass through the affine layers.
pub fn forward_macs(model: &ModelBundle) -> usize {
    model
        .layers()
        .iter()
        .map(|l| {
            let outputs: usize = l.output_shape.iter().product();
            match l.kind() {
                LayerKind::Conv(p) => {
                    let (_, c, kh, kw) = p.dims();
                    outputs * c * kh * kw
                }
                LayerKind::Fc(p) => outputs * p.in_features(),
                _ => 0,
            }
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::forward;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn builders_run_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mlp = random_mlp(&mut rng, &[6, 5, 4, 3]);
        assert_eq!(mlp.output_layer().id(), "fc3");
        let x = random_input(&mut rng, &mlp);
        assert_eq!(forward(&mlp, &x).unwrap().response("fc3").unwrap().len(), 3);

        let net = small_convnet(&mut rng, 2, 10, (4, 6), 3);
        let x = random_input(&mut rng, &net);
        assert_eq!(forward(&net, &x).unwrap().response("pool").unwrap().shape(), &[6, 4, 4]);
    }

    #[test]
    fn mid_cnn_is_large_enough() {
        let net = mid_cnn(&mut ChaCha8Rng::seed_from_u64(2));
        assert!(forward_macs(&net) >= 10_000_000);
    }
}
