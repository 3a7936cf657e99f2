use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackboneConfig, BackboneModel, ModelError};
use crate::numcore::Tensor;
use crate::skeldata::SkeletonTopology;

/// A model as one JSON document. Numbers are written in shortest round-trip
/// form, so loading reproduces every parameter bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub config: BackboneConfig,
    pub topology: SkeletonTopology,
    pub seed: u64,
    /// Backbone and classifier tensors by name.
    pub params: BTreeMap<String, Tensor>,
    /// Detector-specific section (kind, head parameters, hyperparameters).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detector: Option<serde_json::Value>,
}

fn is_backbone_param(name: &str) -> bool {
    name.starts_with("backbone.") || name.starts_with("classifier.")
}

impl Checkpoint {
    pub fn from_model(model: &BackboneModel) -> Self {
        let params = model
            .params
            .to_named()
            .into_iter()
            .filter(|(k, _)| is_backbone_param(k))
            .collect();
        Self {
            config: model.config.clone(),
            topology: model.topology.clone(),
            seed: model.seed,
            params,
            detector: None,
        }
    }

    /// Rebuilds the backbone; head parameters are restored by the detector that owns them.
    pub fn to_model(&self) -> Result<BackboneModel, ModelError> {
        let mut model = BackboneModel::new(self.config.clone(), self.topology.clone(), self.seed)?;
        model.params.load_named(&self.params)?;
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String, ModelError> {
        serde_json::to_string(self).map_err(|e| ModelError::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        serde_json::from_str(text).map_err(|e| ModelError::Checkpoint(e.to_string()))
    }

    /// SHA-256 of the JSON document, hex encoded.
    pub fn hash(&self) -> Result<String, ModelError> {
        Ok(hex::encode(Sha256::digest(self.to_json()?.as_bytes())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
