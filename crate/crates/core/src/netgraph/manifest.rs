//! `ebnet-v1` manifests: a JSON layer list plus a blob of little-endian
//! `f64` weights. Offsets and sizes in the manifest count elements, not bytes.

use serde::{Deserialize, Serialize};

use super::{LayerKind, LayerSpec, ModelBundle, ModelMeta};
use crate::error::{Error, Result};
use crate::tensor::{ConvParams, LinearParams, LrnParams, PoolGeometry, Tensor};

pub const FORMAT_TAG: &str = "ebnet-v1";

#[derive(Debug, Serialize, Deserialize)]
struct ManifestFile {
    format: String,
    layers: Vec<LayerRecord>,
    output_layer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    attention_layer: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    mean: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    labels: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerRecord {
    id: String,
    #[serde(default)]
    inputs: Vec<String>,
    #[serde(flatten)]
    kind: KindRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weight_offset: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weight_shape: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bias_offset: Option<usize>,
}

fn unit_pair() -> [usize; 2] {
    [1, 1]
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum KindRecord {
    Input {
        shape: [usize; 3],
        #[serde(default)]
        flexible: bool,
    },
    Conv {
        #[serde(default = "unit_pair")]
        stride: [usize; 2],
        #[serde(default)]
        padding: [usize; 2],
    },
    Fc,
    Relu,
    Maxpool {
        window: [usize; 2],
        #[serde(default)]
        stride: Option<[usize; 2]>,
        #[serde(default)]
        padding: [usize; 2],
    },
    Avgpool {
        window: [usize; 2],
        #[serde(default)]
        stride: Option<[usize; 2]>,
        #[serde(default)]
        padding: [usize; 2],
    },
    Lrn {
        local_size: usize,
        alpha: f64,
        beta: f64,
        k: f64,
    },
    Concat {
        #[serde(default)]
        axis: usize,
    },
    Flatten,
    Softmax,
    #[serde(rename = "dropout-identity")]
    Dropout,
}

struct Blob<'a> {
    values: &'a [u8],
    len: usize,
    used: usize,
}

impl Blob<'_> {
    fn tensor(&mut self, layer: &str, offset: usize, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let end = offset.checked_add(n).filter(|&e| e <= self.len).ok_or_else(|| {
            Error::MissingWeights(
                layer.to_string(),
                format!("range {offset}+{n} exceeds blob of {} values", self.len),
            )
        })?;
        self.used += n;
        let data = self.values[offset * 8..end * 8]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        Tensor::new(shape.to_vec(), data).map_err(|e| e.at_layer(layer))
    }
}

fn pool_geometry(window: [usize; 2], stride: Option<[usize; 2]>, padding: [usize; 2]) -> Result<PoolGeometry> {
    let stride = stride.unwrap_or(window);
    PoolGeometry::new((window[0], window[1]), (stride[0], stride[1]), (padding[0], padding[1]))
}

fn parse_layer(rec: LayerRecord, blob: &mut Blob) -> Result<LayerSpec> {
    let id = rec.id.clone();
    let weights = |blob: &mut Blob, rank: usize| -> Result<Tensor> {
        let (Some(offset), Some(shape)) = (rec.weight_offset, rec.weight_shape.as_ref()) else {
            return Err(Error::MissingWeights(
                id.clone(),
                "no weight_offset/weight_shape".into(),
            ));
        };
        if shape.len() != rank {
            return Err(Error::shape(format!("weight_shape must have {rank} extents, got {shape:?}")).at_layer(&id));
        }
        blob.tensor(&id, offset, shape)
    };
    let bias = |blob: &mut Blob, n: usize| -> Result<Option<Tensor>> {
        rec.bias_offset.map(|off| blob.tensor(&id, off, &[n])).transpose()
    };
    let kind = match rec.kind {
        KindRecord::Input { shape, flexible } => LayerKind::Input { shape, flexible },
        KindRecord::Conv { stride, padding } => {
            let kernel = weights(blob, 4)?;
            let bias = bias(blob, kernel.shape()[0])?;
            LayerKind::Conv(
                ConvParams::new(kernel, (stride[0], stride[1]), (padding[0], padding[1]), bias)
                    .map_err(|e| e.at_layer(&id))?,
            )
        }
        KindRecord::Fc => {
            let w = weights(blob, 2)?;
            let bias = bias(blob, w.shape()[0])?;
            LayerKind::Fc(LinearParams::new(w, bias).map_err(|e| e.at_layer(&id))?)
        }
        KindRecord::Relu => LayerKind::Relu,
        KindRecord::Maxpool {
            window,
            stride,
            padding,
        } => LayerKind::MaxPool(pool_geometry(window, stride, padding).map_err(|e| e.at_layer(&id))?),
        KindRecord::Avgpool {
            window,
            stride,
            padding,
        } => LayerKind::AvgPool(pool_geometry(window, stride, padding).map_err(|e| e.at_layer(&id))?),
        KindRecord::Lrn {
            local_size,
            alpha,
            beta,
            k,
        } => LayerKind::Lrn(LrnParams::new(local_size, alpha, beta, k).map_err(|e| e.at_layer(&id))?),
        KindRecord::Concat { axis } => {
            if axis != 0 {
                return Err(Error::Parse(format!(
                    "concat `{id}`: only the channel axis (0) is supported"
                )));
            }
            LayerKind::Concat
        }
        KindRecord::Flatten => LayerKind::Flatten,
        KindRecord::Softmax => LayerKind::Softmax,
        KindRecord::Dropout => LayerKind::Dropout,
    };
    Ok(LayerSpec {
        id: rec.id,
        kind,
        inputs: rec.inputs,
    })
}

/// Parses and validates a manifest and its weight blob.
pub fn load_model(manifest_bytes: &[u8], weight_bytes: &[u8]) -> Result<ModelBundle> {
    let file: ManifestFile = serde_json::from_slice(manifest_bytes).map_err(|e| Error::Parse(e.to_string()))?;
    if file.format != FORMAT_TAG {
        return Err(Error::Parse(format!("unsupported format `{}`", file.format)));
    }
    if !weight_bytes.len().is_multiple_of(8) {
        return Err(Error::Parse(format!(
            "weight blob length {} is not a multiple of 8",
            weight_bytes.len()
        )));
    }
    let mut blob = Blob {
        values: weight_bytes,
        len: weight_bytes.len() / 8,
        used: 0,
    };
    let specs = file
        .layers
        .into_iter()
        .map(|rec| parse_layer(rec, &mut blob))
        .collect::<Result<Vec<_>>>()?;
    if blob.used != blob.len {
        return Err(Error::ShapeMismatch(format!(
            "manifest declares {} weight values, blob holds {}",
            blob.used, blob.len
        )));
    }
    let meta = ModelMeta {
        attention_layer: file.attention_layer,
        mean: file.mean,
        scale: file.scale,
        labels: file.labels,
    };
    ModelBundle::new(specs, &file.output_layer, meta)
}

/// Serializes a model; weights are laid out in layer order.
pub fn save_model(model: &ModelBundle) -> (Vec<u8>, Vec<u8>) {
    let mut blob: Vec<u8> = Vec::new();
    let mut push = |t: &Tensor| -> usize {
        let offset = blob.len() / 8;
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        offset
    };
    let layers = model
        .layers()
        .iter()
        .map(|l| {
            let mut rec = LayerRecord {
                id: l.id().to_string(),
                inputs: l.spec.inputs.clone(),
                kind: KindRecord::Relu,
                weight_offset: None,
                weight_shape: None,
                bias_offset: None,
            };
            let pair = |p: (usize, usize)| [p.0, p.1];
            rec.kind = match l.kind() {
                LayerKind::Input { shape, flexible } => KindRecord::Input {
                    shape: *shape,
                    flexible: *flexible,
                },
                LayerKind::Conv(p) => {
                    rec.weight_offset = Some(push(&p.kernel));
                    rec.weight_shape = Some(p.kernel.shape().to_vec());
                    rec.bias_offset = p.bias.as_ref().map(&mut push);
                    KindRecord::Conv {
                        stride: pair(p.stride),
                        padding: pair(p.padding),
                    }
                }
                LayerKind::Fc(p) => {
                    rec.weight_offset = Some(push(&p.weight));
                    rec.weight_shape = Some(p.weight.shape().to_vec());
                    rec.bias_offset = p.bias.as_ref().map(&mut push);
                    KindRecord::Fc
                }
                LayerKind::Relu => KindRecord::Relu,
                LayerKind::MaxPool(g) => KindRecord::Maxpool {
                    window: pair(g.window),
                    stride: Some(pair(g.stride)),
                    padding: pair(g.padding),
                },
                LayerKind::AvgPool(g) => KindRecord::Avgpool {
                    window: pair(g.window),
                    stride: Some(pair(g.stride)),
                    padding: pair(g.padding),
                },
                LayerKind::Lrn(p) => KindRecord::Lrn {
                    local_size: p.local_size,
                    alpha: p.alpha,
                    beta: p.beta,
                    k: p.k,
                },
                LayerKind::Concat => KindRecord::Concat { axis: 0 },
                LayerKind::Flatten => KindRecord::Flatten,
                LayerKind::Softmax => KindRecord::Softmax,
                LayerKind::Dropout => KindRecord::Dropout,
            };
            rec
        })
        .collect();
    let file = ManifestFile {
        format: FORMAT_TAG.to_string(),
        layers,
        output_layer: model.output_layer().id().to_string(),
        attention_layer: model.meta.attention_layer.clone(),
        mean: model.meta.mean.clone(),
        scale: model.meta.scale,
        labels: model.meta.labels.clone(),
    };
    let manifest = serde_json::to_vec_pretty(&file).expect("manifest serializes");
    (manifest, blob)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f64_bytes(v: &[f64]) -> Vec<u8> {
        v.iter().flat_map(|x| x.to_le_bytes()).collect()
    }

    const TWO_LAYER: &str = r#"{
        "format": "ebnet-v1",
        "output_layer": "conv",
        "layers": [
            {"id": "data", "kind": "input", "shape": [1, 3, 3]},
            {"id": "conv", "kind": "conv", "inputs": ["data"], "stride": [1, 1], "padding": [0, 0],
             "weight_offset": 0, "weight_shape": [2, 1, 2, 2], "bias_offset": 8}
        ]
    }"#;

    #[test]
    fn loads_single_conv() {
        let blob = f64_bytes(&[1., 2., 3., 4., 5., 6., 7., 8., 0.5, -0.5]);
        let m = load_model(TWO_LAYER.as_bytes(), &blob).unwrap();
        assert_eq!(m.layers().len(), 2);
        let LayerKind::Conv(p) = m.layer("conv").unwrap().kind() else {
            panic!("conv expected");
        };
        assert_eq!(p.kernel.data()[5], 6.0);
        assert_eq!(p.bias.as_ref().unwrap().data(), &[0.5, -0.5]);
        assert_eq!(m.layer("conv").unwrap().output_shape, vec![2, 2, 2]);
    }

    #[test]
    fn blob_size_must_match() {
        let short = f64_bytes(&[1.0; 9]);
        assert!(matches!(
            load_model(TWO_LAYER.as_bytes(), &short),
            Err(Error::MissingWeights(..))
        ));
        let long = f64_bytes(&[1.0; 11]);
        assert!(matches!(
            load_model(TWO_LAYER.as_bytes(), &long),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(matches!(
            load_model(TWO_LAYER.as_bytes(), &[0u8; 7]),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn parse_failures() {
        let blob = f64_bytes(&[0.0; 10]);
        assert!(matches!(load_model(b"{not json", &blob), Err(Error::Parse(_))));
        let wrong_tag = TWO_LAYER.replace("ebnet-v1", "ebnet-v0");
        assert!(matches!(load_model(wrong_tag.as_bytes(), &blob), Err(Error::Parse(_))));
        let dangling = TWO_LAYER.replace(r#""inputs": ["data"]"#, r#""inputs": ["ghost"]"#);
        assert!(matches!(
            load_model(dangling.as_bytes(), &blob),
            Err(Error::UnknownLayer(_))
        ));
        let no_weights = r#"{"format":"ebnet-v1","output_layer":"fc","layers":[
            {"id":"data","kind":"input","shape":[2,1,1]},
            {"id":"fc","kind":"fc","inputs":["data"]}]}"#;
        assert!(matches!(
            load_model(no_weights.as_bytes(), &[]),
            Err(Error::MissingWeights(..))
        ));
    }

    #[test]
    fn every_kind_parses() {
        let manifest = r#"{"format":"ebnet-v1","output_layer":"fc","attention_layer":"pool",
            "mean":[1,2],"labels":["a","b"],
            "layers":[
            {"id":"data","kind":"input","shape":[2,4,4]},
            {"id":"a","kind":"conv","inputs":["data"],"padding":[1,1],"weight_offset":0,"weight_shape":[1,2,3,3]},
            {"id":"b","kind":"avgpool","inputs":["data"],"window":[3,3],"stride":[1,1],"padding":[1,1]},
            {"id":"cat","kind":"concat","inputs":["a","b"],"axis":0},
            {"id":"r","kind":"relu","inputs":["cat"]},
            {"id":"n","kind":"lrn","inputs":["r"],"local_size":3,"alpha":0.0001,"beta":0.75,"k":1},
            {"id":"pool","kind":"maxpool","inputs":["n"],"window":[2,2]},
            {"id":"d","kind":"dropout-identity","inputs":["pool"]},
            {"id":"flat","kind":"flatten","inputs":["d"]},
            {"id":"fc","kind":"fc","inputs":["flat"],"weight_offset":18,"weight_shape":[2,12]},
            {"id":"prob","kind":"softmax","inputs":["fc"]}
        ]}"#;
        let m = load_model(manifest.as_bytes(), &f64_bytes(&[0.25; 42])).unwrap();
        assert_eq!(m.layer("pool").unwrap().output_shape, vec![3, 2, 2]);
        assert_eq!(m.layer("fc").unwrap().output_shape, vec![2, 1, 1]);
        assert_eq!(m.meta.labels, vec!["a", "b"]);

        let (man, blob) = save_model(&m);
        let again = load_model(&man, &blob).unwrap();
        assert_eq!(save_model(&again), (man, blob));
    }
}
