use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::metric::ImpurityKind;
use crate::backbone::{Checkpoint, ModelError};
use crate::numcore::Tensor;

/// The `detector` section of a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DetectorSection {
    /// Baseline and ODIN read the plain classifier; only the temperatures are recorded.
    Softmax { temperatures: Vec<f64> },
    Confidence {
        params: BTreeMap<String, Tensor>,
        lambda: f64,
        beta: f64,
        lambda_history: Vec<f64>,
    },
    Metric {
        impurity: ImpurityKind,
        margin: f64,
        embed_dim: usize,
        hidden: usize,
        params: BTreeMap<String, Tensor>,
    },
}

impl DetectorSection {
    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("detector sections always serialize")
    }

    pub fn of(ck: &Checkpoint) -> Result<Option<Self>, ModelError> {
        ck.detector
            .as_ref()
            .map(|v| serde_json::from_value(v.clone()).map_err(|e| ModelError::Checkpoint(format!("detector: {e}"))))
            .transpose()
    }
}
