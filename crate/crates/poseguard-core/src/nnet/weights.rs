//! Versioned JSON weight files. One document holds one or more named
//! networks (composite models store several) plus a model-kind tag and a
//! metadata map for training provenance and architecture hyperparameters.
//! Loaders reject unknown `format_version`s.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Activation, Layer, Network, NnetError};

pub const WEIGHT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    /// Row-major (out_dim × in_dim).
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkRecord {
    pub name: String,
    pub input_dim: usize,
    pub output_dim: usize,
    pub init_seed: u64,
    pub layers: Vec<LayerRecord>,
}

impl NetworkRecord {
    pub fn from_network(name: &str, net: &Network) -> NetworkRecord {
        NetworkRecord {
            name: name.to_string(),
            input_dim: net.input_dim(),
            output_dim: net.output_dim(),
            init_seed: net.init_seed,
            layers: net
                .layers
                .iter()
                .map(|l| LayerRecord {
                    in_dim: l.in_dim,
                    out_dim: l.out_dim,
                    activation: l.activation,
                    weights: l.weights.clone(),
                    bias: l.bias.clone(),
                })
                .collect(),
        }
    }

    pub fn to_network(&self) -> Result<Network, NnetError> {
        if self.layers.is_empty() {
            return Err(NnetError::WeightFile(format!("network '{}' has no layers", self.name)));
        }
        let mut prev = self.input_dim;
        for (i, l) in self.layers.iter().enumerate() {
            if l.in_dim != prev {
                return Err(NnetError::WeightFile(format!(
                    "network '{}': layer {i} input dim {} does not chain from {prev}",
                    self.name, l.in_dim
                )));
            }
            if l.weights.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
                return Err(NnetError::WeightFile(format!(
                    "network '{}': layer {i} parameter lengths are inconsistent",
                    self.name
                )));
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(NnetError::WeightFile(format!(
                    "network '{}': layer {i} has non-finite parameters",
                    self.name
                )));
            }
            prev = l.out_dim;
        }
        if prev != self.output_dim {
            return Err(NnetError::WeightFile(format!(
                "network '{}': final layer dim {prev} != declared output {}",
                self.name, self.output_dim
            )));
        }
        Ok(Network {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    in_dim: l.in_dim,
                    out_dim: l.out_dim,
                    weights: l.weights.clone(),
                    bias: l.bias.clone(),
                    activation: l.activation,
                })
                .collect(),
            init_seed: self.init_seed,
        })
    }
}

/// The on-disk weight document. `metadata` keys are sorted on
/// serialization, so rewrites of identical state are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightDoc {
    pub format_version: u32,
    pub model_kind: String,
    pub networks: Vec<NetworkRecord>,
    pub metadata: serde_json::Map<String, serde_json::Value>,
}

impl WeightDoc {
    pub fn new(model_kind: &str) -> WeightDoc {
        WeightDoc {
            format_version: WEIGHT_FORMAT_VERSION,
            model_kind: model_kind.to_string(),
            networks: Vec::new(),
            metadata: serde_json::Map::new(),
        }
    }

    pub fn push_network(&mut self, name: &str, net: &Network) {
        self.networks.push(NetworkRecord::from_network(name, net));
    }

    pub fn network(&self, name: &str) -> Result<Network, NnetError> {
        self.networks
            .iter()
            .find(|n| n.name == name)
            .ok_or_else(|| NnetError::WeightFile(format!("no network named '{name}'")))?
            .to_network()
    }

    pub fn insert_meta(&mut self, key: &str, value: serde_json::Value) {
        self.metadata.insert(key.to_string(), value);
    }

    pub fn meta_u64(&self, key: &str) -> Result<u64, NnetError> {
        self.metadata
            .get(key)
            .and_then(|v| v.as_u64())
            .ok_or_else(|| NnetError::WeightFile(format!("missing or non-integer metadata '{key}'")))
    }

    pub fn meta_str(&self, key: &str) -> Result<&str, NnetError> {
        self.metadata
            .get(key)
            .and_then(|v| v.as_str())
            .ok_or_else(|| NnetError::WeightFile(format!("missing or non-string metadata '{key}'")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("weight doc serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NnetError> {
        fs::write(path, self.to_json()).map_err(|e| NnetError::WeightFile(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<WeightDoc, NnetError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| NnetError::WeightFile(format!("{}: {e}", path.display())))?;
        let doc: WeightDoc = serde_json::from_str(&text)
            .map_err(|e| NnetError::WeightFile(format!("{}: {e}", path.display())))?;
        if doc.format_version != WEIGHT_FORMAT_VERSION {
            return Err(NnetError::WeightFile(format!(
                "{}: unknown format_version {} (supported: {WEIGHT_FORMAT_VERSION})",
                path.display(),
                doc.format_version
            )));
        }
        Ok(doc)
    }

    /// Validates the expected kind before handing the document out.
    pub fn load_kind(path: impl AsRef<Path>, kind: &str) -> Result<WeightDoc, NnetError> {
        let path = path.as_ref();
        let doc = Self::load(path)?;
        if doc.model_kind != kind {
            return Err(NnetError::WeightFile(format!(
                "{}: model kind '{}' where '{kind}' was expected",
                path.display(),
                doc.model_kind
            )));
        }
        Ok(doc)
    }
}
