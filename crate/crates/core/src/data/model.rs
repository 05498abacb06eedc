//! Model files: one JSON object per network.
//!
//! ```json
//! {"input_dim": 2, "num_classes": 2,
//!  "layers": [{"weights": [[1.0, 0.0], [0.0, 1.0]], "bias": [0.0, 0.0]}]}
//! ```
//!
//! Weights are row-major `[n_out][n_in]`. Every layer except the last is
//! followed by a ReLU. Floats are written in shortest round-trip form, so
//! saving and loading preserves every value bit for bit.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{AffineLayer, Network};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    input_dim: usize,
    num_classes: usize,
    layers: Vec<LayerFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

pub fn model_to_json(net: &Network) -> String {
    let file = ModelFile {
        input_dim: net.input_dim(),
        num_classes: net.num_classes(),
        layers: net
            .layers()
            .iter()
            .map(|l| LayerFile {
                weights: l.weights.outer_iter().map(|r| r.to_vec()).collect(),
                bias: l.bias.to_vec(),
            })
            .collect(),
    };
    serde_json::to_string(&file).expect("model serialization cannot fail")
}

pub fn model_from_json(text: &str) -> Result<Network> {
    let file: ModelFile = serde_json::from_str(text)?;
    if file.layers.is_empty() {
        return Err(Error::InvalidNetwork("model has no layers".into()));
    }
    let mut layers = Vec::with_capacity(file.layers.len());
    for (k, layer) in file.layers.into_iter().enumerate() {
        let n_out = layer.weights.len();
        let n_in = layer.weights.first().map_or(0, Vec::len);
        if let Some(row) = layer.weights.iter().position(|r| r.len() != n_in) {
            return Err(Error::InvalidNetwork(format!(
                "layer {k}: weight row {row} has {} entries, expected {n_in}",
                layer.weights[row].len()
            )));
        }
        if layer.bias.len() != n_out {
            return Err(Error::InvalidNetwork(format!(
                "layer {k}: bias has {} entries for {n_out} outputs",
                layer.bias.len()
            )));
        }
        let flat: Vec<f64> = layer.weights.into_iter().flatten().collect();
        let weights = Array2::from_shape_vec((n_out, n_in), flat)
            .map_err(|e| Error::InvalidNetwork(format!("layer {k}: {e}")))?;
        layers.push(AffineLayer::new(weights, Array1::from(layer.bias))?);
    }
    let net = Network::new(layers)?;
    if net.input_dim() != file.input_dim || net.num_classes() != file.num_classes {
        return Err(Error::InvalidNetwork(format!(
            "header declares {}→{} but layers give {}→{}",
            file.input_dim,
            file.num_classes,
            net.input_dim(),
            net.num_classes()
        )));
    }
    Ok(net)
}

pub fn save_model(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = model_to_json(net);
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_json(&text)
}
