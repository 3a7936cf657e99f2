use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{
    check_corpus, count_correct, cross_entropy, fit, BackboneModel, Checkpoint, HasParams, ModelError, StepOutput,
    TrainReport,
};
use crate::numcore::{Graph, ParamId, ParamStore, Schedule, Tensor, Var};
use crate::seeds::derive_seed;
use crate::skeldata::{augment_sequence, center_crop, AugmentConfig, Corpus, SkeletonSequence};

use super::section::DetectorSection;

/// What the confidence branch of a metric head learns to predict.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImpurityKind {
    Density,
    Entropy,
    Gini,
}

impl ImpurityKind {
    pub const ALL: [ImpurityKind; 3] = [ImpurityKind::Density, ImpurityKind::Entropy, ImpurityKind::Gini];

    pub fn name(self) -> &'static str {
        match self {
            ImpurityKind::Density => "density",
            ImpurityKind::Entropy => "entropy",
            ImpurityKind::Gini => "gini",
        }
    }
}

impl fmt::Display for ImpurityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn sq_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices of the batch members closer than `m` to `batch[index]`, itself included.
pub fn neighborhood(batch: &[Vec<f64>], index: usize, m: f64) -> Vec<usize> {
    let x = &batch[index];
    (0..batch.len())
        .filter(|&j| sq_distance(x, &batch[j]).sqrt() < m)
        .collect()
}

pub fn local_density(batch: &[Vec<f64>], index: usize, m: f64) -> f64 {
    neighborhood(batch, index, m).len() as f64 / batch.len() as f64
}

/// `(|n(x)| - 1) |B| / (1 + sum_z |n(z)|)`; zero exactly for isolated points.
pub fn neighborhood_weight(batch: &[Vec<f64>], index: usize, m: f64) -> f64 {
    Neighborhoods::compute(batch, m).weight(index)
}

/// All neighborhoods of one batch, from a single pass over the pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct Neighborhoods {
    pub members: Vec<Vec<usize>>,
    total: usize,
}

impl Neighborhoods {
    pub fn compute(batch: &[Vec<f64>], m: f64) -> Self {
        let n = batch.len();
        let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for i in 0..n {
            for j in (i + 1)..n {
                if sq_distance(&batch[i], &batch[j]).sqrt() < m {
                    members[i].push(j);
                    members[j].push(i);
                }
            }
        }
        for list in &mut members {
            list.sort_unstable();
        }
        let total = members.iter().map(Vec::len).sum();
        Self { members, total }
    }

    pub fn size(&self, i: usize) -> usize {
        self.members[i].len()
    }

    pub fn density(&self, i: usize) -> f64 {
        self.size(i) as f64 / self.members.len() as f64
    }

    pub fn weight(&self, i: usize) -> f64 {
        ((self.size(i) - 1) * self.members.len()) as f64 / (1 + self.total) as f64
    }
}

fn class_frequencies(labels: &[usize], classes: usize) -> Result<Vec<f64>, ModelError> {
    if labels.is_empty() {
        return Err(ModelError::Contract("impurity of an empty neighborhood".into()));
    }
    let mut counts = vec![0usize; classes];
    for &y in labels {
        *counts
            .get_mut(y)
            .ok_or_else(|| ModelError::Contract(format!("label {y} out of range for {classes} classes")))? += 1;
    }
    let n = labels.len() as f64;
    Ok(counts.into_iter().filter(|&c| c > 0).map(|c| c as f64 / n).collect())
}

/// Shannon entropy of the label frequencies divided by `ln(classes)`, so it lies in [0, 1].
pub fn entropy(labels: &[usize], classes: usize) -> Result<f64, ModelError> {
    let p = class_frequencies(labels, classes)?;
    if classes < 2 {
        return Ok(0.0);
    }
    let h: f64 = p.iter().map(|p| -p * p.ln()).sum();
    Ok(h / (classes as f64).ln())
}

pub fn gini(labels: &[usize], classes: usize) -> Result<f64, ModelError> {
    let p = class_frequencies(labels, classes)?;
    Ok(1.0 - p.iter().map(|p| p * p).sum::<f64>())
}

pub fn impurity(labels: &[usize], kind: ImpurityKind, classes: usize) -> Result<f64, ModelError> {
    match kind {
        ImpurityKind::Entropy => entropy(labels, classes),
        ImpurityKind::Gini => gini(labels, classes),
        ImpurityKind::Density => Err(ModelError::Contract("density is not an impurity measure".into())),
    }
}

/// Regression targets for the confidence branch: the local density, or the
/// neighborhood weight times the neighborhood impurity.
pub fn metric_targets(
    batch: &[Vec<f64>],
    labels: &[usize],
    m: f64,
    kind: ImpurityKind,
    classes: usize,
) -> Result<Vec<f64>, ModelError> {
    if batch.len() != labels.len() {
        return Err(ModelError::Contract(format!(
            "{} embeddings but {} labels",
            batch.len(),
            labels.len()
        )));
    }
    let nb = Neighborhoods::compute(batch, m);
    (0..batch.len())
        .map(|i| match kind {
            ImpurityKind::Density => Ok(nb.density(i)),
            _ => {
                let ys: Vec<usize> = nb.members[i].iter().map(|&j| labels[j]).collect();
                Ok(nb.weight(i) * impurity(&ys, kind, classes)?)
            }
        })
        .collect()
}

/// Mean absolute difference between γ and the batch targets.
pub fn impurity_confidence_loss(
    batch: &[Vec<f64>],
    labels: &[usize],
    gammas: &[f64],
    m: f64,
    kind: ImpurityKind,
    classes: usize,
) -> Result<f64, ModelError> {
    if gammas.len() != batch.len() || batch.is_empty() {
        return Err(ModelError::Contract("need one γ per batch member".into()));
    }
    let targets = metric_targets(batch, labels, m, kind, classes)?;
    Ok(gammas.iter().zip(&targets).map(|(g, t)| (g - t).abs()).sum::<f64>() / batch.len() as f64)
}

/// Graph form of the target regression: `mean |γ - target|`. Targets are constants.
pub fn target_loss(g: &mut Graph, gamma: Var, targets: &[f64]) -> Result<Var, ModelError> {
    let gamma = g.reshape(gamma, &[targets.len()])?;
    let t = g.constant(Tensor::vector(targets.to_vec())?);
    let diff = g.sub(gamma, t)?;
    let abs = g.abs(diff)?;
    Ok(g.mean(abs)?)
}

fn pair_count(n: usize) -> Result<usize, ModelError> {
    if n < 2 {
        return Err(ModelError::Contract(format!("contrastive loss needs at least 2 embeddings, got {n}")));
    }
    Ok(n * (n - 1) / 2)
}

/// Mean over all pairs `i < j`: `d^2` for equal labels, `max(0, m - d)^2` otherwise.
pub fn contrastive_loss(embeddings: &[Vec<f64>], labels: &[usize], m: f64) -> Result<f64, ModelError> {
    if embeddings.len() != labels.len() {
        return Err(ModelError::Contract("one label per embedding".into()));
    }
    let pairs = pair_count(embeddings.len())?;
    let mut sum = 0.0;
    for i in 0..embeddings.len() {
        for j in (i + 1)..embeddings.len() {
            let d2 = sq_distance(&embeddings[i], &embeddings[j]);
            sum += if labels[i] == labels[j] {
                d2
            } else {
                (m - d2.sqrt()).max(0.0).powi(2)
            };
        }
    }
    Ok(sum / pairs as f64)
}

/// [`contrastive_loss`] over the rows of a `[n, E]` node.
pub fn contrastive_loss_graph(g: &mut Graph, embeddings: Var, labels: &[usize], m: f64) -> Result<Var, ModelError> {
    let n = labels.len();
    if g.value(embeddings).shape().first() != Some(&n) {
        return Err(ModelError::Contract("one label per embedding row".into()));
    }
    let pairs = pair_count(n)?;
    let (mut same, mut diff) = (vec![0.0; n * n], vec![0.0; n * n]);
    for i in 0..n {
        for j in (i + 1)..n {
            if labels[i] == labels[j] {
                same[i * n + j] = 1.0;
            } else {
                diff[i * n + j] = 1.0;
            }
        }
    }
    let d2 = g.pairwise_sq_dist(embeddings)?;
    let d = g.sqrt(d2)?;
    let neg = g.scalar_mul(d, -1.0)?;
    let gap = g.add_scalar(neg, m)?;
    let hinge = g.relu(gap)?;
    let hinge = g.square(hinge)?;
    let same = g.constant(Tensor::new(vec![n, n], same)?);
    let diff = g.constant(Tensor::new(vec![n, n], diff)?);
    let pull = g.mul(same, d2)?;
    let push = g.mul(diff, hinge)?;
    let total = g.add(pull, push)?;
    let total = g.sum(total)?;
    Ok(g.scalar_mul(total, 1.0 / pairs as f64)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    pub embed_dim: usize,
    /// Width of the hidden layer inside the embedding and the residual block.
    pub hidden: usize,
    /// Contrastive margin, also the neighborhood radius.
    pub margin: f64,
    /// Pre-computed feature views per training sequence; view 0 is the centre crop.
    pub views: usize,
    pub embedding: Schedule,
    pub classification: Schedule,
    pub confidence: Schedule,
}

impl Default for MetricConfig {
    fn default() -> Self {
        let head = Schedule {
            epochs: 50,
            batch_size: 64,
            lr: 1e-3,
            decay_every: 20,
            decay_factor: 0.1,
        };
        Self {
            embed_dim: 32,
            hidden: 64,
            margin: 1.0,
            views: 8,
            embedding: Schedule {
                epochs: 80,
                batch_size: 64,
                lr: 1e-3,
                decay_every: 40,
                decay_factor: 0.1,
            },
            classification: head,
            confidence: head,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.embed_dim == 0 || self.hidden == 0 || self.views == 0 {
            return Err(ModelError::Contract("metric head sizes and view count must be >= 1".into()));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(ModelError::Contract(format!("margin must be positive, got {}", self.margin)));
        }
        for s in [&self.embedding, &self.classification, &self.confidence] {
            s.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct HeadIds {
    embed: [ParamId; 4],
    residual: [ParamId; 4],
    classifier: [ParamId; 2],
    confidence: [ParamId; 2],
}

/// Frozen backbone followed by an embedding layer, a residual classification
/// branch and a sigmoid confidence branch on the embedding.
#[derive(Clone, Debug)]
pub struct MetricModel {
    pub backbone: BackboneModel,
    pub params: ParamStore,
    pub kind: ImpurityKind,
    pub margin: f64,
    pub embed_dim: usize,
    pub hidden: usize,
    ids: HeadIds,
}

impl HasParams for MetricModel {
    fn store(&self) -> &ParamStore {
        &self.params
    }
    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricOutput {
    pub logits: Vec<f64>,
    pub gamma: f64,
    /// Oriented OoD score: γ for density heads, `1 - γ` for impurity heads.
    pub score: f64,
}

fn affine(g: &mut Graph, store: &ParamStore, w: ParamId, b: ParamId, x: Var) -> Result<Var, ModelError> {
    let w = g.param(store, w);
    let b = g.param(store, b);
    let y = g.matmul(x, w)?;
    Ok(g.add(y, b)?)
}

impl MetricModel {
    pub fn new(
        backbone: BackboneModel,
        embed_dim: usize,
        hidden: usize,
        margin: f64,
        kind: ImpurityKind,
    ) -> Result<Self, ModelError> {
        if embed_dim == 0 || hidden == 0 || !(margin > 0.0) {
            return Err(ModelError::Contract("metric head needs positive sizes and margin".into()));
        }
        let (d, c) = (backbone.config.d_out(), backbone.config.classes);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(backbone.seed, &[4]));
        let mut p = ParamStore::new();
        let mut layer = |p: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize| {
            let w = p.add_he_uniform(format!("metric.{name}.weight"), &[fan_in, fan_out], fan_in, &mut rng);
            let b = p.add_zeros(format!("metric.{name}.bias"), &[fan_out]);
            [w, b]
        };
        let [e0w, e0b] = layer(&mut p, "embed.0", d, hidden);
        let [e1w, e1b] = layer(&mut p, "embed.1", hidden, embed_dim);
        let [r0w, r0b] = layer(&mut p, "residual.0", embed_dim, hidden);
        let [r1w, r1b] = layer(&mut p, "residual.1", hidden, embed_dim);
        let classifier = layer(&mut p, "classifier", embed_dim, c);
        let confidence = layer(&mut p, "confidence", embed_dim, 1);
        Ok(Self {
            backbone,
            params: p,
            kind,
            margin,
            embed_dim,
            hidden,
            ids: HeadIds {
                embed: [e0w, e0b, e1w, e1b],
                residual: [r0w, r0b, r1w, r1b],
                classifier,
                confidence,
            },
        })
    }

    pub fn from_config(backbone: BackboneModel, config: &MetricConfig, kind: ImpurityKind) -> Result<Self, ModelError> {
        config.validate()?;
        Self::new(backbone, config.embed_dim, config.hidden, config.margin, kind)
    }

    pub fn classes(&self) -> usize {
        self.backbone.config.classes
    }

    pub fn embedding_ids(&self) -> Vec<ParamId> {
        self.ids.embed.to_vec()
    }

    pub fn classification_ids(&self) -> Vec<ParamId> {
        self.ids.residual.iter().chain(&self.ids.classifier).copied().collect()
    }

    pub fn confidence_ids(&self) -> Vec<ParamId> {
        self.ids.confidence.to_vec()
    }

    /// `[B, D]` backbone features to `[B, E]` embeddings.
    pub fn embed(&self, g: &mut Graph, features: Var) -> Result<Var, ModelError> {
        let [w0, b0, w1, b1] = self.ids.embed;
        let h = affine(g, &self.params, w0, b0, features)?;
        let h = g.relu(h)?;
        affine(g, &self.params, w1, b1, h)
    }

    /// Residual block `e + F(e)` followed by the class logits.
    pub fn classify(&self, g: &mut Graph, embedding: Var) -> Result<Var, ModelError> {
        let [w0, b0, w1, b1] = self.ids.residual;
        let h = affine(g, &self.params, w0, b0, embedding)?;
        let h = g.relu(h)?;
        let r = affine(g, &self.params, w1, b1, h)?;
        let out = g.add(embedding, r)?;
        let [w, b] = self.ids.classifier;
        affine(g, &self.params, w, b, out)
    }

    /// γ as `[B, 1]`.
    pub fn confidence(&self, g: &mut Graph, embedding: Var) -> Result<Var, ModelError> {
        let [w, b] = self.ids.confidence;
        let pre = affine(g, &self.params, w, b, embedding)?;
        Ok(g.sigmoid(pre)?)
    }

    pub fn score_of(&self, gamma: f64) -> f64 {
        match self.kind {
            ImpurityKind::Density => gamma,
            ImpurityKind::Entropy | ImpurityKind::Gini => 1.0 - gamma,
        }
    }

    /// Head outputs for pre-computed backbone feature rows.
    pub fn infer_features(&self, features: &[Vec<f64>]) -> Result<Vec<MetricOutput>, ModelError> {
        let d = self.backbone.config.d_out();
        let c = self.classes();
        let mut out = Vec::with_capacity(features.len());
        let mut g = Graph::new();
        for chunk in features.chunks(64) {
            g.reset();
            if chunk.iter().any(|f| f.len() != d) {
                return Err(ModelError::Contract(format!("feature rows must have {d} values")));
            }
            let x = Tensor::new(vec![chunk.len(), d], chunk.concat())?;
            let x = g.constant(x);
            let e = self.embed(&mut g, x)?;
            let logits = self.classify(&mut g, e)?;
            let gamma = self.confidence(&mut g, e)?;
            let (logits, gamma) = (g.value(logits).values(), g.value(gamma).values());
            for i in 0..chunk.len() {
                out.push(MetricOutput {
                    logits: logits[i * c..(i + 1) * c].to_vec(),
                    gamma: gamma[i],
                    score: self.score_of(gamma[i]),
                });
            }
        }
        Ok(out)
    }

    /// Sequences within one call must share a frame count.
    pub fn infer(&self, seqs: &[SkeletonSequence]) -> Result<Vec<MetricOutput>, ModelError> {
        let features: Vec<Vec<f64>> = self.backbone.infer(seqs)?.into_iter().map(|(f, _)| f).collect();
        self.infer_features(&features)
    }

    /// Embeddings for pre-computed backbone feature rows.
    pub fn embeddings(&self, features: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, ModelError> {
        let d = self.backbone.config.d_out();
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![features.len(), d], features.concat())?);
        let e = self.embed(&mut g, x)?;
        Ok(g.value(e).values().chunks(self.embed_dim).map(<[f64]>::to_vec).collect())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_model(&self.backbone);
        ck.detector = Some(
            DetectorSection::Metric {
                impurity: self.kind,
                margin: self.margin,
                embed_dim: self.embed_dim,
                hidden: self.hidden,
                params: self.params.to_named(),
            }
            .to_value(),
        );
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, ModelError> {
        let Some(DetectorSection::Metric {
            impurity,
            margin,
            embed_dim,
            hidden,
            params,
        }) = DetectorSection::of(ck)?
        else {
            return Err(ModelError::Checkpoint("checkpoint has no metric section".into()));
        };
        let mut model = Self::new(ck.to_model()?, embed_dim, hidden, margin, impurity)?;
        model.params.load_named(&params)?;
        Ok(model)
    }
}

pub fn metric_ood_score(model: &MetricModel, seq: &SkeletonSequence) -> Result<f64, ModelError> {
    Ok(model
        .infer(std::slice::from_ref(seq))?
        .pop()
        .expect("one output per input")
        .score)
}

/// Frozen backbone features of a training corpus, several augmented views per
/// sequence so the heads see some of the augmentation variety.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBank {
    values: Vec<f64>,
    pub labels: Vec<usize>,
    pub views: usize,
    pub dim: usize,
}

impl FeatureBank {
    pub fn build(
        backbone: &BackboneModel,
        corpus: &Corpus,
        views: usize,
        augment: &AugmentConfig,
        seed: u64,
    ) -> Result<Self, ModelError> {
        check_corpus(backbone, corpus)?;
        if views == 0 {
            return Err(ModelError::Contract("feature bank needs at least one view".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[5]));
        let mut seqs = Vec::with_capacity(corpus.len() * views);
        for s in &corpus.sequences {
            seqs.push(center_crop(s, augment.crop_len)?);
            for _ in 1..views {
                seqs.push(augment_sequence(s, &corpus.topology, augment, &mut rng)?);
            }
        }
        let values = backbone.infer(&seqs)?.into_iter().flat_map(|(f, _)| f).collect();
        Ok(Self {
            values,
            labels: corpus.labels(),
            views,
            dim: backbone.config.d_out(),
        })
    }

    /// A single-view bank from given feature rows.
    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<usize>) -> Result<Self, ModelError> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.len() != labels.len() || dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(ModelError::Contract("feature rows must be non-empty, equally sized and labelled".into()));
        }
        Ok(Self {
            values: rows.concat(),
            labels,
            views: 1,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn view(&self, sample: usize, view: usize) -> &[f64] {
        let start = (sample * self.views + view) * self.dim;
        &self.values[start..start + self.dim]
    }

    /// One randomly chosen view per sample, as a `[B, D]` tensor.
    fn batch(&self, idx: &[usize], rng: &mut ChaCha8Rng) -> Result<(Tensor, Vec<usize>), ModelError> {
        let mut values = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            let v = rng.random_range(0..self.views);
            values.extend_from_slice(self.view(i, v));
        }
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        Ok((Tensor::new(vec![idx.len(), self.dim], values)?, labels))
    }
}

fn detached_embedding(g: &mut Graph, model: &MetricModel, x: Tensor) -> Result<Var, ModelError> {
    let x = g.constant(x);
    let e = model.embed(g, x)?;
    let value = g.value(e).clone();
    Ok(g.constant(value))
}

/// Phase 1: contrastive training of the embedding layer over all pairs of each batch.
pub fn train_embedding(
    model: &mut MetricModel,
    bank: &FeatureBank,
    schedule: &Schedule,
    seed: u64,
) -> Result<TrainReport, ModelError> {
    let ids = model.embedding_ids();
    fit(model, &ids, bank.len(), schedule, derive_seed(seed, &[6]), |g, m, batch, rng| {
        let (x, labels) = bank.batch(batch, rng)?;
        let x = g.constant(x);
        let e = m.embed(g, x)?;
        let loss = contrastive_loss_graph(g, e, &labels, m.margin)?;
        Ok(StepOutput { loss, correct: 0 })
    })
}

/// Phase 2: residual block and classifier on frozen embeddings.
pub fn train_classification_branch(
    model: &mut MetricModel,
    bank: &FeatureBank,
    schedule: &Schedule,
    seed: u64,
) -> Result<TrainReport, ModelError> {
    let ids = model.classification_ids();
    let classes = model.classes();
    fit(model, &ids, bank.len(), schedule, derive_seed(seed, &[7]), |g, m, batch, rng| {
        let (x, labels) = bank.batch(batch, rng)?;
        let e = detached_embedding(g, m, x)?;
        let logits = m.classify(g, e)?;
        let loss = cross_entropy(g, logits, &labels)?;
        let correct = count_correct(g.value(logits).values(), classes, &labels);
        Ok(StepOutput { loss, correct })
    })
}

/// Phase 3: confidence branch regressed onto density or weighted impurity
/// targets computed from the frozen embeddings of each batch.
pub fn train_confidence_branch(
    model: &mut MetricModel,
    bank: &FeatureBank,
    schedule: &Schedule,
    seed: u64,
) -> Result<TrainReport, ModelError> {
    let ids = model.confidence_ids();
    let classes = model.classes();
    let salt = model.kind as u64;
    fit(model, &ids, bank.len(), schedule, derive_seed(seed, &[8, salt]), |g, m, batch, rng| {
        let (x, labels) = bank.batch(batch, rng)?;
        let e = detached_embedding(g, m, x)?;
        let rows: Vec<Vec<f64>> = g.value(e).values().chunks(m.embed_dim).map(<[f64]>::to_vec).collect();
        let targets = metric_targets(&rows, &labels, m.margin, m.kind, classes)?;
        let gamma = m.confidence(g, e)?;
        let loss = target_loss(g, gamma, &targets)?;
        Ok(StepOutput { loss, correct: 0 })
    })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub embedding: TrainReport,
    pub classification: TrainReport,
    pub confidence: TrainReport,
}

/// All three phases on top of a trained, frozen backbone.
pub fn train_metric_detector(
    backbone: &BackboneModel,
    train: &Corpus,
    config: &MetricConfig,
    kind: ImpurityKind,
    augment: &AugmentConfig,
    seed: u64,
) -> Result<(MetricModel, MetricReport), ModelError> {
    let mut model = MetricModel::from_config(backbone.clone(), config, kind)?;
    let bank = FeatureBank::build(backbone, train, config.views, augment, seed)?;
    let embedding = train_embedding(&mut model, &bank, &config.embedding, seed)?;
    let classification = train_classification_branch(&mut model, &bank, &config.classification, seed)?;
    let confidence = train_confidence_branch(&mut model, &bank, &config.confidence, seed)?;
    Ok((
        model,
        MetricReport {
            embedding,
            classification,
            confidence,
        },
    ))
}
