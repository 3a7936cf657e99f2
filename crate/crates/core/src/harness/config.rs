use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::backbone::BackboneConfig;
use crate::detectors::{ConfidenceConfig, ImpurityKind, MetricConfig, TEMPERATURE_GRID};
use crate::numcore::Schedule;
use crate::skeldata::{AugmentConfig, GeneratorConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    Baseline,
    Odin,
    Confidence,
    Density,
    Entropy,
    Gini,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 6] = [
        DetectorKind::Baseline,
        DetectorKind::Odin,
        DetectorKind::Confidence,
        DetectorKind::Density,
        DetectorKind::Entropy,
        DetectorKind::Gini,
    ];

    pub fn impurity(self) -> Option<ImpurityKind> {
        match self {
            DetectorKind::Density => Some(ImpurityKind::Density),
            DetectorKind::Entropy => Some(ImpurityKind::Entropy),
            DetectorKind::Gini => Some(ImpurityKind::Gini),
            _ => None,
        }
    }
}

/// Layer widths and temporal kernel; the class count follows from the corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSpec {
    pub widths: Vec<usize>,
    pub kernel: usize,
}

impl BackboneSpec {
    pub fn with_classes(&self, classes: usize) -> BackboneConfig {
        BackboneConfig {
            widths: self.widths.clone(),
            kernel: self.kernel,
            classes,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSettings {
    pub kinds: Vec<DetectorKind>,
    /// Temperature reported as the ODIN row of the result tables.
    pub odin_temperature: f64,
    /// Grid for the temperature sweep; must contain 1.
    pub temperatures: Vec<f64>,
    /// Intradataset evaluation reuses the intraclass thresholds instead of re-estimating them.
    pub reuse_threshold: bool,
}

impl Default for DetectorSettings {
    fn default() -> Self {
        Self {
            kinds: DetectorKind::ALL.to_vec(),
            odin_temperature: 1.6,
            temperatures: TEMPERATURE_GRID.to_vec(),
            reuse_threshold: false,
        }
    }
}

/// Everything a campaign depends on. `out` and `jobs` only say where and how
/// fast to run; they are left out of the config hash.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: String,
    pub jobs: usize,
    /// Stratified split folds; the test share is `1 / folds`.
    pub folds: usize,
    pub family_a: GeneratorConfig,
    pub family_b: GeneratorConfig,
    pub backbone: BackboneSpec,
    pub classifier: Schedule,
    pub augment: AugmentConfig,
    pub detectors: DetectorSettings,
    pub confidence: ConfidenceConfig,
    pub metric: MetricConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            out: "out".into(),
            jobs: 1,
            folds: 5,
            family_a: GeneratorConfig::family_a(),
            family_b: GeneratorConfig::family_b(),
            backbone: BackboneSpec {
                widths: vec![32, 64, 128],
                kernel: 5,
            },
            classifier: Schedule {
                epochs: 40,
                batch_size: 32,
                lr: 1e-2,
                decay_every: 25,
                decay_factor: 0.1,
            },
            augment: AugmentConfig::default(),
            detectors: DetectorSettings::default(),
            confidence: ConfidenceConfig::default(),
            metric: MetricConfig::default(),
        }
    }
}

#[derive(Serialize)]
struct Hashed<'a> {
    seed: u64,
    folds: usize,
    family_a: &'a GeneratorConfig,
    family_b: &'a GeneratorConfig,
    backbone: &'a BackboneSpec,
    classifier: &'a Schedule,
    augment: &'a AugmentConfig,
    detectors: &'a DetectorSettings,
    confidence: &'a ConfidenceConfig,
    metric: &'a MetricConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let config: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String, HarnessError> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.jobs == 0 {
            return bad("jobs must be at least 1".into());
        }
        if self.folds < 2 {
            return bad(format!("folds must be at least 2, got {}", self.folds));
        }
        if self.family_a.classes.len() < 3 {
            return bad(format!(
                "family_a needs at least 3 classes for leave-one-out, got {}",
                self.family_a.classes.len()
            ));
        }
        for (name, g) in [("family_a", &self.family_a), ("family_b", &self.family_b)] {
            g.motions().map_err(|e| HarnessError::Config(format!("{name}: {e}")))?;
        }
        self.backbone
            .with_classes(self.family_a.classes.len() - 1)
            .validate()
            .map_err(|e| HarnessError::Config(format!("backbone: {e}")))?;
        self.classifier
            .validate()
            .map_err(|e| HarnessError::Config(format!("classifier: {e}")))?;
        if self.augment.crop_len > self.family_a.frames.min(self.family_b.frames) || self.augment.crop_len == 0 {
            return bad(format!("augment.crop_len {} exceeds the sequence length", self.augment.crop_len));
        }
        let d = &self.detectors;
        if d.kinds.is_empty() {
            return bad("detectors.kinds is empty".into());
        }
        if d.kinds.iter().collect::<BTreeSet<_>>().len() != d.kinds.len() {
            return bad("detectors.kinds lists a detector twice".into());
        }
        if !(d.odin_temperature > 0.0 && d.odin_temperature.is_finite()) {
            return bad(format!("odin_temperature must be positive, got {}", d.odin_temperature));
        }
        if d.temperatures.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return bad("every sweep temperature must be positive and finite".into());
        }
        if !d.temperatures.contains(&1.0) {
            return bad("the temperature grid must contain 1".into());
        }
        self.confidence
            .validate()
            .map_err(|e| HarnessError::Config(format!("confidence: {e}")))?;
        self.metric
            .validate()
            .map_err(|e| HarnessError::Config(format!("metric: {e}")))?;
        Ok(())
    }

    /// SHA-256 over the result-determining fields.
    pub fn hash(&self) -> String {
        let hashed = Hashed {
            seed: self.seed,
            folds: self.folds,
            family_a: &self.family_a,
            family_b: &self.family_b,
            backbone: &self.backbone,
            classifier: &self.classifier,
            augment: &self.augment,
            detectors: &self.detectors,
            confidence: &self.confidence,
            metric: &self.metric,
        };
        let text = serde_json::to_string(&hashed).expect("config always serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn wants(&self, kind: DetectorKind) -> bool {
        self.detectors.kinds.contains(&kind)
    }

    pub fn metric_kinds(&self) -> Vec<ImpurityKind> {
        DetectorKind::ALL
            .iter()
            .filter(|k| self.wants(**k))
            .filter_map(|k| k.impurity())
            .collect()
    }
}
