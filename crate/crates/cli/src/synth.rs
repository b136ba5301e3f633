//! Synthetic models and a labelled colored-square dataset.

use std::path::Path;

use anyhow::{Context, Result};
use ebnet_core::fixtures::small_convnet;
use ebnet_core::io::write_pnm8;
use ebnet_core::netgraph::{save_model, LayerKind, LayerSpec, ModelBundle, ModelMeta};
use ebnet_core::tensor::{ConvParams, LinearParams, PoolGeometry};
use ebnet_core::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

pub const SCENE_SIZE: usize = 64;
pub const CLASSES: [&str; 3] = ["red", "green", "blue"];
const SIDES: [usize; 3] = [10, 14, 20];

/// One colored square; `x0, y0` is its top-left pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Square {
    pub class: usize,
    pub quadrant: usize,
    pub x0: usize,
    pub y0: usize,
    pub side: usize,
}

impl Square {
    /// Inclusive pixel box `[x0, y0, x1, y1]`.
    pub fn bbox(&self) -> [usize; 4] {
        [self.x0, self.y0, self.x0 + self.side - 1, self.y0 + self.side - 1]
    }
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub squares: Vec<Square>,
    /// 3×64×64 pixel values in 0..=255.
    pub pixels: Tensor,
}

/// Scene `index` of the sequence seeded by `seed`: `1 + index % 3` squares
/// of distinct classes in distinct quadrants over dim gray noise. Every
/// fourth scene has one square filling its whole quadrant.
pub fn scene(seed: u64, index: usize) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9).wrapping_add(index as u64));
    let k = 1 + index % 3;
    let mut classes = [0, 1, 2];
    classes.shuffle(&mut rng);
    let mut quadrants = [0, 1, 2, 3];
    quadrants.shuffle(&mut rng);
    let half = SCENE_SIZE / 2;
    let squares: Vec<Square> = (0..k)
        .map(|j| {
            let side = if j == 0 && index.is_multiple_of(4) {
                half
            } else {
                SIDES[rng.random_range(0..SIDES.len())]
            };
            let q = quadrants[j];
            Square {
                class: classes[j],
                quadrant: q,
                x0: (q % 2) * half + rng.random_range(0..=half - side),
                y0: (q / 2) * half + rng.random_range(0..=half - side),
                side,
            }
        })
        .collect();

    let plane = SCENE_SIZE * SCENE_SIZE;
    let mut pixels = Tensor::from_fn(&[3, SCENE_SIZE, SCENE_SIZE], |_| rng.random_range(30.0..50.0));
    for s in &squares {
        for y in s.y0..s.y0 + s.side {
            for x in s.x0..s.x0 + s.side {
                for c in 0..3 {
                    let v = if c == s.class {
                        rng.random_range(200.0..=255.0)
                    } else {
                        rng.random_range(0.0..30.0)
                    };
                    pixels.data_mut()[c * plane + y * SCENE_SIZE + x] = v;
                }
            }
        }
    }
    Scene { squares, pixels }
}

/// Hand-built detector for [`scene`] images. Each class channel is
/// isolated by a 1×1 color-opponent convolution, smoothed by a 5×5 box
/// filter, pooled, and summed into its class score. `prob` is a softmax
/// over `fc`, which is the output layer.
pub fn detector() -> ModelBundle {
    let c = CLASSES.len();
    let opponent = Tensor::from_fn(&[c, c, 1, 1], |i| if i / c == i % c { 1.0 } else { -1.0 });
    let k = 5;
    let boxed = Tensor::from_fn(&[c, c, k, k], |i| {
        let (o, ic) = (i / (c * k * k), (i / (k * k)) % c);
        if o == ic {
            1.0 / (k * k) as f64
        } else {
            0.0
        }
    });
    let pooled = SCENE_SIZE / 2;
    let per_channel = pooled * pooled;
    let scale = 1.0 / per_channel as f64;
    let classifier = Tensor::from_fn(&[c, c * per_channel], |i| {
        let (o, j) = (i / (c * per_channel), i % (c * per_channel));
        if j / per_channel == o {
            scale
        } else {
            -0.5 * scale
        }
    });
    let specs = vec![
        LayerSpec::new(
            "data",
            LayerKind::Input {
                shape: [c, SCENE_SIZE, SCENE_SIZE],
                flexible: false,
            },
            &[],
        ),
        LayerSpec::new(
            "conv1",
            LayerKind::Conv(ConvParams::new(opponent, (1, 1), (0, 0), None).expect("valid conv")),
            &["data"],
        ),
        LayerSpec::new("relu1", LayerKind::Relu, &["conv1"]),
        LayerSpec::new(
            "conv2",
            LayerKind::Conv(ConvParams::new(boxed, (1, 1), (2, 2), None).expect("valid conv")),
            &["relu1"],
        ),
        LayerSpec::new("relu2", LayerKind::Relu, &["conv2"]),
        LayerSpec::new(
            "pool2",
            LayerKind::MaxPool(PoolGeometry::new((2, 2), (2, 2), (0, 0)).expect("valid pool")),
            &["relu2"],
        ),
        LayerSpec::new("flat", LayerKind::Flatten, &["pool2"]),
        LayerSpec::new(
            "fc",
            LayerKind::Fc(LinearParams::new(classifier, None).expect("valid fc")),
            &["flat"],
        ),
        LayerSpec::new("prob", LayerKind::Softmax, &["fc"]),
    ];
    let meta = ModelMeta {
        attention_layer: Some("pool2".into()),
        mean: vec![0.0; c],
        scale: Some(1.0 / 255.0),
        labels: CLASSES.iter().map(|s| s.to_string()).collect(),
    };
    ModelBundle::new(specs, "fc", meta).expect("valid detector")
}

/// Random conv net small enough for the exact oracle.
pub fn toy(seed: u64) -> ModelBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = small_convnet(&mut rng, 3, 10, (3, 4), 3);
    model.meta = ModelMeta {
        attention_layer: Some("conv1".into()),
        mean: vec![0.0; 3],
        scale: Some(1.0 / 255.0),
        labels: Vec::new(),
    };
    model
}

pub fn write_model(model: &ModelBundle, dir: &Path, name: &str) -> Result<std::path::PathBuf> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let (manifest, weights) = save_model(model);
    let path = dir.join(format!("{name}.json"));
    std::fs::write(&path, manifest)?;
    std::fs::write(dir.join(format!("{name}.bin")), weights)?;
    Ok(path)
}

/// Writes `images/scene_NNN.ppm` and `manifest.jsonl` under `dir`.
pub fn write_scenes(dir: &Path, seed: u64, count: usize) -> Result<Vec<Scene>> {
    let images = dir.join("images");
    std::fs::create_dir_all(&images).with_context(|| format!("creating {}", images.display()))?;
    let mut lines = vec![json!({ "categories": CLASSES }).to_string()];
    let mut scenes = Vec::with_capacity(count);
    for i in 0..count {
        let s = scene(seed, i);
        let name = format!("images/scene_{i:03}.ppm");
        std::fs::write(dir.join(&name), write_pnm8(&s.pixels)?)?;
        let regions: Vec<_> = s
            .squares
            .iter()
            .map(|q| json!({ "category": CLASSES[q.class], "bbox": q.bbox() }))
            .collect();
        lines.push(json!({ "image": name, "width": SCENE_SIZE, "height": SCENE_SIZE, "regions": regions }).to_string());
        scenes.push(s);
    }
    std::fs::write(dir.join("manifest.jsonl"), lines.join("\n") + "\n")?;
    Ok(scenes)
}
