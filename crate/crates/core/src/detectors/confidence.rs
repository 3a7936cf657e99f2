use std::cell::{Cell, RefCell};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{
    augmented_batch, check_corpus, count_correct, fit, BackboneModel, Checkpoint, HasParams, ModelError, StepOutput,
    TrainReport,
};
use crate::numcore::{Graph, ParamId, ParamStore, Schedule, Tensor, Var};
use crate::seeds::derive_seed;
use crate::skeldata::{AugmentConfig, Corpus, SkeletonSequence};

use super::section::DetectorSection;
use super::softmax;

/// γ is clamped to `[GAMMA_EPS, 1 - GAMMA_EPS]` before any logarithm.
pub const GAMMA_EPS: f64 = 1e-6;
/// Multiplicative step of the λ controller.
pub const LAMBDA_RATE: f64 = 1.01;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfidenceConfig {
    /// Initial weight of the confidence penalty. The controller moves it by
    /// only 1% per step, so it should start near its working range; starting
    /// far below lets γ sink and starves the classifier of gradient.
    pub lambda: f64,
    /// Budget the mean `-log γ` is steered towards.
    pub beta: f64,
}

impl Default for ConfidenceConfig {
    fn default() -> Self {
        Self { lambda: 1.0, beta: 0.3 }
    }
}

impl ConfidenceConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(ModelError::Contract(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(ModelError::Contract(format!("beta must lie in (0, 1), got {}", self.beta)));
        }
        Ok(())
    }
}

/// Backbone plus an affine + sigmoid branch on the pooled features.
#[derive(Clone, Debug)]
pub struct ConfidenceModel {
    pub backbone: BackboneModel,
    weight: ParamId,
    bias: ParamId,
    pub lambda: f64,
    pub beta: f64,
    /// λ after every optimizer step.
    pub lambda_history: Vec<f64>,
}

impl HasParams for ConfidenceModel {
    fn store(&self) -> &ParamStore {
        &self.backbone.params
    }
    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.backbone.params
    }
}

pub struct ConfidenceForward {
    pub logits: Var,
    /// Clamped γ, `[B, 1]`.
    pub gamma: Var,
}

impl ConfidenceModel {
    pub fn new(mut backbone: BackboneModel, config: &ConfidenceConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let d = backbone.config.d_out();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(backbone.seed, &[2]));
        let weight = backbone.params.add_he_uniform("confidence.weight", &[d, 1], d, &mut rng);
        let bias = backbone.params.add_zeros("confidence.bias", &[1]);
        Ok(Self {
            backbone,
            weight,
            bias,
            lambda: config.lambda,
            beta: config.beta,
            lambda_history: Vec::new(),
        })
    }

    pub fn head_ids(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        let mut ids = self.backbone.backbone_ids();
        ids.extend(self.head_ids());
        ids
    }

    pub fn forward_graph(&self, g: &mut Graph, input: Var) -> Result<ConfidenceForward, ModelError> {
        let f = self.backbone.forward_graph(g, input)?;
        let w = g.param(&self.backbone.params, self.weight);
        let b = g.param(&self.backbone.params, self.bias);
        let pre = g.matmul(f.features, w)?;
        let pre = g.add(pre, b)?;
        let gamma = g.sigmoid(pre)?;
        let gamma = g.clamp(gamma, GAMMA_EPS, 1.0 - GAMMA_EPS)?;
        Ok(ConfidenceForward { logits: f.logits, gamma })
    }

    /// Logits and γ per sequence. Sequences within one call must share a frame count.
    pub fn infer(&self, seqs: &[SkeletonSequence]) -> Result<Vec<(Vec<f64>, f64)>, ModelError> {
        let refs: Vec<&SkeletonSequence> = seqs.iter().collect();
        let c = self.backbone.config.classes;
        let mut out = Vec::with_capacity(seqs.len());
        let mut g = Graph::new();
        for chunk in refs.chunks(64) {
            g.reset();
            let input = g.constant(crate::backbone::batch_tensor(chunk, self.backbone.joints())?);
            let f = self.forward_graph(&mut g, input)?;
            let logits = g.value(f.logits).values();
            let gamma = g.value(f.gamma).values();
            for i in 0..chunk.len() {
                out.push((logits[i * c..(i + 1) * c].to_vec(), gamma[i]));
            }
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_model(&self.backbone);
        let params = [self.weight, self.bias]
            .iter()
            .map(|&id| (self.backbone.params.name(id).to_string(), self.backbone.params.get(id).clone()))
            .collect();
        ck.detector = Some(
            DetectorSection::Confidence {
                params,
                lambda: self.lambda,
                beta: self.beta,
                lambda_history: self.lambda_history.clone(),
            }
            .to_value(),
        );
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, ModelError> {
        let Some(DetectorSection::Confidence {
            params,
            lambda,
            beta,
            lambda_history,
        }) = DetectorSection::of(ck)?
        else {
            return Err(ModelError::Checkpoint("checkpoint has no confidence section".into()));
        };
        let mut model = Self::new(ck.to_model()?, &ConfidenceConfig { lambda, beta })?;
        let mut named = model.backbone.params.to_named();
        for (name, t) in params {
            if !named.contains_key(&name) {
                return Err(ModelError::Checkpoint(format!("unexpected confidence parameter `{name}`")));
            }
            named.insert(name, t);
        }
        model.backbone.params.load_named(&named)?;
        model.lambda_history = lambda_history;
        Ok(model)
    }
}

/// Class probabilities and γ for one sequence. γ is the OoD score.
pub fn confidence_forward(model: &ConfidenceModel, seq: &SkeletonSequence) -> Result<(Vec<f64>, f64), ModelError> {
    let (logits, gamma) = model
        .infer(std::slice::from_ref(seq))?
        .pop()
        .expect("one output per input");
    Ok((softmax(&logits), gamma))
}

pub struct ConfidenceObjective {
    pub total: Var,
    /// Cross-entropy of the interpolated prediction.
    pub task: Var,
    /// `-λ mean(log γ)`.
    pub penalty: Var,
    /// Batch mean of `-log γ`, the quantity compared with β.
    pub mean_neg_log_gamma: f64,
}

/// `o' = γ o + (1 - γ) y` with `o = softmax(logits)` and one-hot `y`;
/// loss = `-mean log o'_y - λ mean log γ`. `gamma` is `[B, 1]` and already clamped.
pub fn confidence_objective(
    g: &mut Graph,
    logits: Var,
    gamma: Var,
    labels: &[usize],
    lambda: f64,
) -> Result<ConfidenceObjective, ModelError> {
    let shape = g.value(logits).shape().to_vec();
    let (b, c) = match shape[..] {
        [b, c] if b == labels.len() => (b, c),
        _ => {
            return Err(ModelError::Contract(format!(
                "logits {shape:?} do not match {} labels",
                labels.len()
            )))
        }
    };
    if b == 0 || labels.iter().any(|&y| y >= c) {
        return Err(ModelError::Contract("labels must be non-empty and within the class range".into()));
    }
    let mut onehot = vec![0.0; b * c];
    for (i, &y) in labels.iter().enumerate() {
        onehot[i * c + y] = 1.0;
    }
    let y = g.constant(Tensor::new(vec![b, c], onehot)?);
    let o = g.softmax(logits)?;
    let diff = g.sub(o, y)?;
    let scaled = g.mul(gamma, diff)?;
    let interp = g.add(y, scaled)?;
    let picked = g.pick(interp, labels)?;
    let logp = g.log(picked)?;
    let task = g.mean(logp)?;
    let task = g.scalar_mul(task, -1.0)?;
    let log_gamma = g.log(gamma)?;
    let mean_log_gamma = g.mean(log_gamma)?;
    let mean_neg_log_gamma = -g.scalar(mean_log_gamma)?;
    let penalty = g.scalar_mul(mean_log_gamma, -lambda)?;
    let total = g.add(task, penalty)?;
    Ok(ConfidenceObjective {
        total,
        task,
        penalty,
        mean_neg_log_gamma,
    })
}

/// Raises λ when the confidence loss exceeds the budget, lowers it otherwise.
pub fn update_lambda(lambda: f64, mean_neg_log_gamma: f64, beta: f64) -> f64 {
    if mean_neg_log_gamma > beta {
        lambda * LAMBDA_RATE
    } else {
        lambda / LAMBDA_RATE
    }
}

pub struct ConfidenceStep {
    pub loss: Var,
    pub correct: usize,
    /// λ to use for the next step.
    pub lambda: f64,
}

/// Builds the joint loss for one batch and the λ that follows it.
/// Backpropagation and the parameter update are left to the caller.
pub fn confidence_train_step(
    g: &mut Graph,
    model: &ConfidenceModel,
    input: Var,
    labels: &[usize],
    lambda: f64,
    beta: f64,
) -> Result<ConfidenceStep, ModelError> {
    let f = model.forward_graph(g, input)?;
    let obj = confidence_objective(g, f.logits, f.gamma, labels, lambda)?;
    let correct = count_correct(g.value(f.logits).values(), model.backbone.config.classes, labels);
    Ok(ConfidenceStep {
        loss: obj.total,
        correct,
        lambda: update_lambda(lambda, obj.mean_neg_log_gamma, beta),
    })
}

/// Trains backbone, classifier and confidence branch together.
pub fn train_confidence(
    model: &mut ConfidenceModel,
    train: &Corpus,
    schedule: &Schedule,
    augment: &AugmentConfig,
    seed: u64,
) -> Result<TrainReport, ModelError> {
    check_corpus(&model.backbone, train)?;
    let ids = model.trainable_ids();
    let lambda = Cell::new(model.lambda);
    let history = RefCell::new(Vec::new());
    let beta = model.beta;
    let report = fit(model, &ids, train.len(), schedule, derive_seed(seed, &[3]), |g, m, batch, rng| {
        let (input, labels) = augmented_batch(train, batch, augment, rng)?;
        let input = g.constant(input);
        let step = confidence_train_step(g, m, input, &labels, lambda.get(), beta)?;
        lambda.set(step.lambda);
        history.borrow_mut().push(step.lambda);
        Ok(StepOutput {
            loss: step.loss,
            correct: step.correct,
        })
    })?;
    model.lambda = lambda.get();
    model.lambda_history.extend(history.into_inner());
    Ok(report)
}
