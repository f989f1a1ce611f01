//! JSON checkpoints.
//!
//! A checkpoint is a single JSON document:
//!
//! ```json
//! {"layer_dims": [7, 32, 2],
//!  "activation": "tanh",
//!  "weights": [[...], [...]],
//!  "biases": [[...], [...]],
//!  "encoding": "xt-fourier-v1",
//!  "data_dim": 2,
//!  "n_conditions": 2}
//! ```
//!
//! Weight matrices are flattened row-major per layer. Numbers are written in
//! shortest-roundtrip decimal, so save/load reproduces every 64-bit value bit
//! for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net::{Activation, DenseNet, EncodingKind, InputEncoding};
use crate::Result;

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    layer_dims: Vec<usize>,
    activation: Activation,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    encoding: EncodingKind,
    data_dim: usize,
    n_conditions: usize,
}

pub fn save_json(net: &DenseNet) -> String {
    let enc = net.encoding();
    let doc = CheckpointDoc {
        layer_dims: net.layer_dims().to_vec(),
        activation: Activation::Tanh,
        weights: net.weights.clone(),
        biases: net.biases.clone(),
        encoding: enc.kind,
        data_dim: enc.data_dim,
        n_conditions: enc.n_conditions,
    };
    serde_json::to_string(&doc).expect("checkpoint serialization cannot fail")
}

pub fn load_json(text: &str) -> Result<DenseNet> {
    let doc: CheckpointDoc = serde_json::from_str(text)?;
    let encoding = InputEncoding {
        kind: doc.encoding,
        data_dim: doc.data_dim,
        n_conditions: doc.n_conditions,
    };
    DenseNet::from_parts(doc.layer_dims, doc.weights, doc.biases, encoding)
}

pub fn save_file(net: &DenseNet, path: &Path) -> Result<()> {
    std::fs::write(path, save_json(net))?;
    Ok(())
}

pub fn load_file(path: &Path) -> Result<DenseNet> {
    load_json(&std::fs::read_to_string(path)?)
}
