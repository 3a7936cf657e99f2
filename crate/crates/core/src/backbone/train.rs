use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{BackboneModel, ModelError};
use crate::numcore::{Adam, Graph, NumError, ParamId, ParamStore, Schedule, Tensor, Var};
use crate::seeds::derive_seed;
use crate::skeldata::{augment_sequence, AugmentConfig, Corpus, SkeletonSequence};

/// Stacks sequences into a `[B, T, J, 2]` tensor.
pub fn batch_tensor(seqs: &[&SkeletonSequence], joints: usize) -> Result<Tensor, ModelError> {
    let t = seqs.first().map_or(0, |s| s.len());
    if seqs.is_empty() || t == 0 {
        return Err(ModelError::Contract("empty batch".into()));
    }
    let mut values = Vec::with_capacity(seqs.len() * t * joints * 2);
    for s in seqs {
        if s.len() != t || s.frames.iter().any(|f| f.len() != joints) {
            return Err(ModelError::Num(NumError::ShapeMismatch(format!(
                "sequence `{}` is {}x{}, batch expects {t}x{joints}",
                s.source,
                s.len(),
                s.joints()
            ))));
        }
        values.extend(s.flat());
    }
    Ok(Tensor::new(vec![seqs.len(), t, joints, 2], values)?)
}

/// Mean softmax cross-entropy of `[B, C]` logits.
pub fn cross_entropy(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var, ModelError> {
    let logp = g.log_softmax(logits)?;
    let picked = g.pick(logp, labels)?;
    let mean = g.mean(picked)?;
    Ok(g.scalar_mul(mean, -1.0)?)
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn count_correct(logits: &[f64], classes: usize, labels: &[usize]) -> usize {
    logits
        .chunks(classes)
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub lr: f64,
    /// Sample-weighted mean of the batch losses.
    pub loss: f64,
    /// Training accuracy on the augmented batches, when the step reports it.
    pub accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
}

impl TrainReport {
    pub fn loss_curve(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }
}

/// What one training step recorded.
pub struct StepOutput {
    pub loss: Var,
    pub correct: usize,
}

/// Anything that owns the parameter store its graphs read from.
pub trait HasParams {
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
}

impl HasParams for BackboneModel {
    fn store(&self) -> &ParamStore {
        &self.params
    }
    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }
}

/// Minibatch Adam over `n` samples: a fresh permutation each epoch, the step
/// closure builds the loss for a batch of sample indices, and only `trainable`
/// parameters are updated.
pub fn fit<M, F>(
    model: &mut M,
    trainable: &[ParamId],
    n: usize,
    schedule: &Schedule,
    seed: u64,
    mut step: F,
) -> Result<TrainReport, ModelError>
where
    M: HasParams,
    F: FnMut(&mut Graph, &M, &[usize], &mut ChaCha8Rng) -> Result<StepOutput, ModelError>,
{
    schedule.validate()?;
    if n == 0 {
        return Err(ModelError::Contract("cannot train on an empty corpus".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = Adam::new();
    let mut order: Vec<usize> = (0..n).collect();
    let mut g = Graph::new();
    let mut report = TrainReport::default();
    for epoch in 0..schedule.epochs {
        let lr = schedule.lr_at(epoch);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0);
        for batch in batches(&order, schedule.batch_size) {
            g.reset();
            let out = step(&mut g, model, batch, &mut rng)?;
            loss_sum += g.scalar(out.loss)? * batch.len() as f64;
            correct += out.correct;
            g.backward(out.loss, model.store_mut())?;
            adam.step(model.store_mut(), trainable, lr)?;
        }
        report.epochs.push(EpochStats {
            lr,
            loss: loss_sum / n as f64,
            accuracy: correct as f64 / n as f64,
        });
        log::debug!("epoch {epoch}: lr {lr:.1e} loss {:.4}", loss_sum / n as f64);
    }
    model.store_mut().clear_grads();
    Ok(report)
}

/// Consecutive chunks of `order`; a trailing single sample joins the previous
/// chunk so pairwise losses always see at least two samples.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let start = (out.len() - 1) * size;
        *out.last_mut().expect("at least one chunk remains") = &order[start..];
    }
    out
}

fn check_labels(corpus: &Corpus, classes: usize) -> Result<(), ModelError> {
    if corpus.is_empty() {
        return Err(ModelError::Contract("cannot train on an empty corpus".into()));
    }
    if let Some(s) = corpus.sequences.iter().find(|s| s.label >= classes) {
        return Err(ModelError::Contract(format!(
            "label {} of `{}` out of range for {classes} classes",
            s.label, s.source
        )));
    }
    Ok(())
}

/// Augmented minibatch for `batch`, drawn from `corpus`.
pub(crate) fn augmented_batch(
    corpus: &Corpus,
    batch: &[usize],
    augment: &AugmentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor, Vec<usize>), ModelError> {
    let seqs = batch
        .iter()
        .map(|&i| augment_sequence(&corpus.sequences[i], &corpus.topology, augment, rng))
        .collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&SkeletonSequence> = seqs.iter().collect();
    let labels = batch.iter().map(|&i| corpus.sequences[i].label).collect();
    Ok((batch_tensor(&refs, corpus.topology.joints())?, labels))
}

pub(crate) fn check_corpus(model: &BackboneModel, corpus: &Corpus) -> Result<(), ModelError> {
    if corpus.topology.joints() != model.joints() {
        return Err(ModelError::Contract(format!(
            "corpus has {} joints, model {}",
            corpus.topology.joints(),
            model.joints()
        )));
    }
    check_labels(corpus, model.config.classes)
}

/// Softmax cross-entropy training of backbone and classifier with per-sample,
/// per-epoch augmentation.
pub fn train_classifier(
    model: &mut BackboneModel,
    train: &Corpus,
    schedule: &Schedule,
    augment: &AugmentConfig,
    seed: u64,
) -> Result<TrainReport, ModelError> {
    check_corpus(model, train)?;
    let ids = model.backbone_ids();
    let classes = model.config.classes;
    fit(model, &ids, train.len(), schedule, derive_seed(seed, &[1]), |g, m, batch, rng| {
        let (input, labels) = augmented_batch(train, batch, augment, rng)?;
        let input = g.constant(input);
        let f = m.forward_graph(g, input)?;
        let loss = cross_entropy(g, f.logits, &labels)?;
        let correct = count_correct(g.value(f.logits).values(), classes, &labels);
        Ok(StepOutput { loss, correct })
    })
}
