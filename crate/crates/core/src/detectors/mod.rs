//! OoD scoring: maximum softmax, tempered softmax (ODIN without input
//! perturbation), a learned confidence branch and metric-learning heads.
//! Every score is oriented so that higher means more in-distribution.

mod confidence;
mod metric;
mod section;

pub use confidence::{
    confidence_forward, confidence_objective, confidence_train_step, train_confidence, update_lambda,
    ConfidenceConfig, ConfidenceForward, ConfidenceModel, ConfidenceObjective, ConfidenceStep, GAMMA_EPS,
    LAMBDA_RATE,
};
pub use metric::{
    contrastive_loss, contrastive_loss_graph, entropy, gini, impurity, impurity_confidence_loss, local_density,
    metric_ood_score, metric_targets, neighborhood, neighborhood_weight, target_loss, train_classification_branch,
    train_confidence_branch, train_embedding, train_metric_detector, FeatureBank, ImpurityKind, MetricConfig,
    MetricModel, MetricOutput, MetricReport, Neighborhoods,
};
pub use section::DetectorSection;

use crate::backbone::ModelError;
pub use crate::numcore::softmax_vec as softmax;

/// Default ODIN temperature grid.
pub const TEMPERATURE_GRID: [f64; 10] = [1.0, 1.6, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0, 1000.0];

fn check_logits(logits: &[f64]) -> Result<(), ModelError> {
    if logits.len() < 2 {
        return Err(ModelError::Contract(format!(
            "a softmax score needs at least 2 classes, got {}",
            logits.len()
        )));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(ModelError::Contract("logits must be finite".into()));
    }
    Ok(())
}

fn check_temperature(t: f64) -> Result<(), ModelError> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(ModelError::Contract(format!("temperature must be positive and finite, got {t}")))
    }
}

fn max_of(p: &[f64]) -> f64 {
    p.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Largest softmax probability.
pub fn baseline_score(logits: &[f64]) -> Result<f64, ModelError> {
    check_logits(logits)?;
    Ok(max_of(&softmax(logits)))
}

/// `softmax(logits / t)`. Dividing by exactly 1.0 is the identity, so `t = 1`
/// reproduces the plain softmax bit for bit.
pub fn tempered_softmax(logits: &[f64], t: f64) -> Result<Vec<f64>, ModelError> {
    check_temperature(t)?;
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(ModelError::Contract("logits must be finite".into()));
    }
    let scaled: Vec<f64> = logits.iter().map(|x| x / t).collect();
    Ok(softmax(&scaled))
}

pub fn odin_score(logits: &[f64], t: f64) -> Result<f64, ModelError> {
    check_logits(logits)?;
    Ok(max_of(&tempered_softmax(logits, t)?))
}
