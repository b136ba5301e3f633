use anyhow::Result;
use ebnet_core::fixtures::forward_macs;
use ebnet_core::netgraph::LayerKind;
use serde::{Deserialize, Serialize};

use crate::args::InspectArgs;
use crate::prep::load_model_file;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerSummary {
    pub id: String,
    pub kind: String,
    pub inputs: Vec<String>,
    pub output_shape: Vec<usize>,
    pub parameters: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InspectReport {
    pub layers: Vec<LayerSummary>,
    pub output_layer: String,
    pub attention_layer: Option<String>,
    pub labels: Vec<String>,
    pub neurons: usize,
    pub multiply_adds: usize,
}

pub fn cmd_inspect(args: &InspectArgs) -> Result<InspectReport> {
    let model = load_model_file(&args.model)?.model;
    let layers = model
        .layers()
        .iter()
        .map(|l| {
            let parameters = match l.kind() {
                LayerKind::Conv(p) => p.kernel.len() + p.bias.as_ref().map_or(0, |b| b.len()),
                LayerKind::Fc(p) => p.weight.len() + p.bias.as_ref().map_or(0, |b| b.len()),
                _ => 0,
            };
            LayerSummary {
                id: l.id().to_string(),
                kind: l.kind().name().to_string(),
                inputs: l.spec.inputs.clone(),
                output_shape: l.output_shape.clone(),
                parameters,
            }
        })
        .collect();
    Ok(InspectReport {
        layers,
        output_layer: model.output_layer().id().to_string(),
        attention_layer: model.meta.attention_layer.clone(),
        labels: model.meta.labels.clone(),
        neurons: model.neuron_count(),
        multiply_adds: forward_macs(&model),
    })
}
