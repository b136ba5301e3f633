//! Model description, the `ebnet-v1` storage format, graph validation and the
//! activation-recording forward pass.

mod forward;
mod manifest;
mod signal;

pub use forward::{forward, ActivationCache};
pub use manifest::{load_model, save_model, FORMAT_TAG};
pub use signal::{class_signal, confidence_signal, spatial_signal};

use std::collections::HashMap;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::tensor::{ConvParams, LinearParams, LrnParams, PoolGeometry};

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    /// Image entry point. `flexible` inputs accept any spatial extent.
    Input {
        shape: [usize; 3],
        flexible: bool,
    },
    Conv(ConvParams),
    /// Affine map over the flattened input; output is out × 1 × 1.
    Fc(LinearParams),
    Relu,
    MaxPool(PoolGeometry),
    AvgPool(PoolGeometry),
    Lrn(LrnParams),
    /// Channel-axis concatenation.
    Concat,
    Flatten,
    Softmax,
    Dropout,
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Input { .. } => "input",
            LayerKind::Conv(_) => "conv",
            LayerKind::Fc(_) => "fc",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool(_) => "maxpool",
            LayerKind::AvgPool(_) => "avgpool",
            LayerKind::Lrn(_) => "lrn",
            LayerKind::Concat => "concat",
            LayerKind::Flatten => "flatten",
            LayerKind::Softmax => "softmax",
            LayerKind::Dropout => "dropout-identity",
        }
    }

    pub fn is_affine(&self) -> bool {
        matches!(self, LayerKind::Conv(_) | LayerKind::Fc(_) | LayerKind::AvgPool(_))
    }
}

/// A layer as declared, before graph validation.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub id: String,
    pub kind: LayerKind,
    pub inputs: Vec<String>,
}

impl LayerSpec {
    pub fn new(id: impl Into<String>, kind: LayerKind, inputs: &[&str]) -> Self {
        Self {
            id: id.into(),
            kind,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Excitatory (non-negative) copy of an affine layer's weights.
#[derive(Debug, Clone)]
pub enum Excitatory {
    Conv(ConvParams),
    Fc(LinearParams),
}

#[derive(Debug)]
pub struct Layer {
    pub spec: LayerSpec,
    /// Producer positions in [`ModelBundle::layers`].
    pub inputs: Vec<usize>,
    /// Output extents for the declared input shape.
    pub output_shape: Vec<usize>,
    excitatory: OnceLock<Excitatory>,
}

impl Clone for Layer {
    fn clone(&self) -> Self {
        Self {
            spec: self.spec.clone(),
            inputs: self.inputs.clone(),
            output_shape: self.output_shape.clone(),
            excitatory: OnceLock::new(),
        }
    }
}

impl Layer {
    pub fn id(&self) -> &str {
        &self.spec.id
    }

    pub fn kind(&self) -> &LayerKind {
        &self.spec.kind
    }

    /// `max(W, 0)` for conv and fc layers, computed once and kept.
    pub fn excitatory(&self) -> Option<&Excitatory> {
        match &self.spec.kind {
            LayerKind::Conv(p) => Some(self.excitatory.get_or_init(|| Excitatory::Conv(p.excitatory()))),
            LayerKind::Fc(p) => Some(self.excitatory.get_or_init(|| Excitatory::Fc(p.excitatory()))),
            _ => None,
        }
    }
}

/// Metadata carried alongside the graph.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelMeta {
    /// Default layer for attention maps.
    pub attention_layer: Option<String>,
    /// Per-channel means subtracted during preprocessing.
    pub mean: Vec<f64>,
    /// Multiplier applied after mean subtraction.
    pub scale: Option<f64>,
    /// Class names of the output layer's channels.
    pub labels: Vec<String>,
}

/// A validated, topologically ordered network with its weights.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    layers: Vec<Layer>,
    index: HashMap<String, usize>,
    consumers: Vec<Vec<usize>>,
    output_layer: usize,
    input_layer: usize,
    pub meta: ModelMeta,
}

impl ModelBundle {
    /// Validates the graph (unique ids, no dangling inputs, no cycles),
    /// orders it topologically, and infers every layer's output shape.
    pub fn new(specs: Vec<LayerSpec>, output_layer: &str, meta: ModelMeta) -> Result<Self> {
        let order = topological_order(&specs)?;
        let mut pos_of = HashMap::new();
        let mut layers: Vec<Layer> = Vec::with_capacity(specs.len());
        let mut specs: Vec<Option<LayerSpec>> = specs.into_iter().map(Some).collect();
        for &i in &order {
            let spec = specs[i].take().expect("each layer is ordered once");
            let inputs: Vec<usize> = spec.inputs.iter().map(|id| pos_of[id.as_str()]).collect();
            let input_shapes: Vec<&[usize]> = inputs.iter().map(|&p| layers[p].output_shape.as_slice()).collect();
            let output_shape = infer_shape(&spec, &input_shapes).map_err(|e| e.at_layer(&spec.id))?;
            pos_of.insert(spec.id.clone(), layers.len());
            layers.push(Layer {
                spec,
                inputs,
                output_shape,
                excitatory: OnceLock::new(),
            });
        }
        let index: HashMap<String, usize> = layers.iter().enumerate().map(|(i, l)| (l.spec.id.clone(), i)).collect();

        let mut consumers = vec![Vec::new(); layers.len()];
        for (i, l) in layers.iter().enumerate() {
            for &p in &l.inputs {
                consumers[p].push(i);
            }
        }

        let inputs: Vec<usize> = layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l.kind(), LayerKind::Input { .. }))
            .map(|(i, _)| i)
            .collect();
        let [input_layer] = inputs[..] else {
            return Err(Error::Parse(format!(
                "expected exactly one input layer, found {}",
                inputs.len()
            )));
        };

        for (i, l) in layers.iter().enumerate() {
            if matches!(l.kind(), LayerKind::Softmax) && !consumers[i].is_empty() {
                return Err(Error::Parse(format!("softmax `{}` must be a final layer", l.id())));
            }
        }

        let output = *index
            .get(output_layer)
            .ok_or_else(|| Error::UnknownLayer(output_layer.to_string()))?;
        if matches!(layers[output].kind(), LayerKind::Softmax) {
            return Err(Error::Parse(
                "output layer must precede softmax; signals are defined on its input".into(),
            ));
        }
        if let Some(att) = &meta.attention_layer {
            if !index.contains_key(att) {
                return Err(Error::UnknownLayer(att.clone()));
            }
        }

        Ok(Self {
            layers,
            index,
            consumers,
            output_layer: output,
            input_layer,
            meta,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer(&self, id: &str) -> Result<&Layer> {
        self.position(id).map(|i| &self.layers[i])
    }

    pub fn position(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownLayer(id.to_string()))
    }

    pub fn consumers(&self, pos: usize) -> &[usize] {
        &self.consumers[pos]
    }

    pub fn output_layer(&self) -> &Layer {
        &self.layers[self.output_layer]
    }

    pub fn input_layer(&self) -> &Layer {
        &self.layers[self.input_layer]
    }

    /// Copy with the given affine layer's weights (and bias) negated.
    pub fn with_negated_layer(&self, id: &str) -> Result<ModelBundle> {
        let pos = self.position(id)?;
        let mut out = self.clone();
        let layer = &mut out.layers[pos];
        layer.spec.kind = match &layer.spec.kind {
            LayerKind::Conv(p) => LayerKind::Conv(p.negated()),
            LayerKind::Fc(p) => LayerKind::Fc(p.negated()),
            _ => return Err(Error::DualUndefined(id.to_string())),
        };
        layer.excitatory = OnceLock::new();
        Ok(out)
    }

    /// Layers from which `from` can be reached, `from` included.
    pub fn ancestors(&self, from: usize) -> Vec<bool> {
        let mut mark = vec![false; self.layers.len()];
        mark[from] = true;
        for i in (0..=from).rev() {
            if mark[i] {
                for &p in &self.layers[i].inputs {
                    mark[p] = true;
                }
            }
        }
        mark
    }

    /// Layers reachable from `from`, `from` included.
    pub fn descendants(&self, from: usize) -> Vec<bool> {
        let mut mark = vec![false; self.layers.len()];
        mark[from] = true;
        for i in from + 1..self.layers.len() {
            mark[i] = self.layers[i].inputs.iter().any(|&p| mark[p]);
        }
        mark
    }

    pub fn neuron_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.output_shape.iter().product::<usize>())
            .sum()
    }
}

/// Kahn's algorithm, preferring declaration order among ready layers.
fn topological_order(specs: &[LayerSpec]) -> Result<Vec<usize>> {
    let mut pos = HashMap::new();
    for (i, s) in specs.iter().enumerate() {
        if pos.insert(s.id.as_str(), i).is_some() {
            return Err(Error::Parse(format!("duplicate layer id `{}`", s.id)));
        }
    }
    let mut pending = vec![0usize; specs.len()];
    let mut users = vec![Vec::new(); specs.len()];
    for (i, s) in specs.iter().enumerate() {
        for input in &s.inputs {
            let &p = pos
                .get(input.as_str())
                .ok_or_else(|| Error::UnknownLayer(input.clone()))?;
            pending[i] += 1;
            users[p].push(i);
        }
    }
    let mut ready: std::collections::BTreeSet<usize> = (0..specs.len()).filter(|&i| pending[i] == 0).collect();
    let mut order = Vec::with_capacity(specs.len());
    while let Some(i) = ready.pop_first() {
        order.push(i);
        for &u in &users[i] {
            pending[u] -= 1;
            if pending[u] == 0 {
                ready.insert(u);
            }
        }
    }
    if order.len() < specs.len() {
        let stuck = (0..specs.len()).find(|&i| pending[i] > 0).unwrap();
        return Err(Error::CycleDetected(specs[stuck].id.clone()));
    }
    Ok(order)
}

fn single_input<'a>(spec: &LayerSpec, shapes: &[&'a [usize]]) -> Result<&'a [usize]> {
    match shapes {
        [s] => Ok(s),
        _ => Err(Error::shape(format!(
            "`{}` layers take one input, got {}",
            spec.kind.name(),
            shapes.len()
        ))),
    }
}

pub(crate) fn infer_shape(spec: &LayerSpec, shapes: &[&[usize]]) -> Result<Vec<usize>> {
    match &spec.kind {
        LayerKind::Input { shape, .. } => {
            if !shapes.is_empty() {
                return Err(Error::shape("input layers take no inputs"));
            }
            if shape.contains(&0) {
                return Err(Error::shape(format!("input extents must be positive, got {shape:?}")));
            }
            Ok(shape.to_vec())
        }
        LayerKind::Conv(p) => p.output_shape(single_input(spec, shapes)?),
        LayerKind::Fc(p) => p.output_shape(single_input(spec, shapes)?),
        LayerKind::MaxPool(g) | LayerKind::AvgPool(g) => g.output_shape(single_input(spec, shapes)?),
        LayerKind::Relu | LayerKind::Lrn(_) | LayerKind::Softmax | LayerKind::Dropout => {
            let s = single_input(spec, shapes)?;
            if s.len() != 3 {
                return Err(Error::shape(format!("expected C×H×W input, got {s:?}")));
            }
            Ok(s.to_vec())
        }
        LayerKind::Flatten => Ok(vec![single_input(spec, shapes)?.iter().product(), 1, 1]),
        LayerKind::Concat => {
            let Some(first) = shapes.first() else {
                return Err(Error::shape("concat needs at least one input"));
            };
            let mut channels = 0;
            for s in shapes {
                if s.len() != 3 || s[1..] != first[1..] {
                    return Err(Error::shape(format!(
                        "concat inputs must share spatial extents: {first:?} vs {s:?}"
                    )));
                }
                channels += s[0];
            }
            Ok(vec![channels, first[1], first[2]])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn conv(o: usize, c: usize, k: usize) -> LayerKind {
        LayerKind::Conv(ConvParams::new(Tensor::full(&[o, c, k, k], 0.1), (1, 1), (0, 0), None).unwrap())
    }

    fn input(c: usize, h: usize, w: usize) -> LayerKind {
        LayerKind::Input {
            shape: [c, h, w],
            flexible: false,
        }
    }

    #[test]
    fn orders_and_infers_shapes() {
        let specs = vec![
            LayerSpec::new("cat", LayerKind::Concat, &["a", "b"]),
            LayerSpec::new("a", conv(2, 1, 3), &["data"]),
            LayerSpec::new("data", input(1, 5, 5), &[]),
            LayerSpec::new("b", conv(3, 1, 3), &["data"]),
        ];
        let m = ModelBundle::new(specs, "cat", ModelMeta::default()).unwrap();
        let ids: Vec<&str> = m.layers().iter().map(|l| l.id()).collect();
        assert_eq!(ids, ["data", "a", "b", "cat"]);
        assert_eq!(m.layer("cat").unwrap().output_shape, vec![5, 3, 3]);
        assert_eq!(m.consumers(0), &[1, 2]);
    }

    #[test]
    fn rejects_bad_graphs() {
        let dangling = vec![
            LayerSpec::new("data", input(1, 4, 4), &[]),
            LayerSpec::new("r", LayerKind::Relu, &["nope"]),
        ];
        assert!(matches!(
            ModelBundle::new(dangling, "r", ModelMeta::default()),
            Err(Error::UnknownLayer(_))
        ));

        let cyclic = vec![
            LayerSpec::new("data", input(1, 4, 4), &[]),
            LayerSpec::new("a", LayerKind::Concat, &["data", "b"]),
            LayerSpec::new("b", LayerKind::Relu, &["a"]),
        ];
        assert!(matches!(
            ModelBundle::new(cyclic, "b", ModelMeta::default()),
            Err(Error::CycleDetected(_))
        ));

        let dup = vec![
            LayerSpec::new("data", input(1, 4, 4), &[]),
            LayerSpec::new("data", LayerKind::Relu, &[]),
        ];
        assert!(ModelBundle::new(dup, "data", ModelMeta::default()).is_err());

        let bad_channels = vec![
            LayerSpec::new("data", input(2, 4, 4), &[]),
            LayerSpec::new("c", conv(1, 3, 1), &["data"]),
        ];
        let err = ModelBundle::new(bad_channels, "c", ModelMeta::default()).unwrap_err();
        assert!(matches!(err, Error::AtLayer { ref layer, .. } if layer == "c"));

        let softmax_mid = vec![
            LayerSpec::new("data", input(1, 1, 1), &[]),
            LayerSpec::new("s", LayerKind::Softmax, &["data"]),
            LayerSpec::new("r", LayerKind::Relu, &["s"]),
        ];
        assert!(ModelBundle::new(softmax_mid, "r", ModelMeta::default()).is_err());

        let softmax_out = vec![
            LayerSpec::new("data", input(1, 1, 1), &[]),
            LayerSpec::new("s", LayerKind::Softmax, &["data"]),
        ];
        assert!(ModelBundle::new(softmax_out, "s", ModelMeta::default()).is_err());
    }

    #[test]
    fn ancestors_and_descendants() {
        let specs = vec![
            LayerSpec::new("data", input(1, 5, 5), &[]),
            LayerSpec::new("a", conv(2, 1, 3), &["data"]),
            LayerSpec::new("b", conv(3, 1, 3), &["data"]),
            LayerSpec::new("ra", LayerKind::Relu, &["a"]),
        ];
        let m = ModelBundle::new(specs, "ra", ModelMeta::default()).unwrap();
        assert_eq!(m.ancestors(3), vec![true, true, false, true]);
        assert_eq!(m.descendants(1), vec![false, true, false, true]);
    }
}
