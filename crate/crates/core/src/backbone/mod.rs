//! Spatio-temporal graph-convolution feature extractor with a softmax classifier.
//!
//! Each block applies `Â·X·W` (joint mixing over the normalized skeleton graph,
//! then channel mixing), a depthwise temporal convolution, a bias and a ReLU.
//! Features are the global average over frames and joints of the last block.

mod checkpoint;
mod train;

pub use checkpoint::Checkpoint;
pub use train::{argmax, batch_tensor, cross_entropy, fit, train_classifier, EpochStats, HasParams, StepOutput, TrainReport};
pub(crate) use train::{augmented_batch, check_corpus, count_correct};

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::numcore::{Graph, JointMixer, NumError, ParamId, ParamStore, Var};
use crate::seeds::derive_seed;
use crate::skeldata::{SkelError, SkeletonSequence, SkeletonTopology};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Data(#[from] SkelError),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    /// Output channels of each block; the block count is `widths.len()`.
    pub widths: Vec<usize>,
    /// Temporal kernel length, odd.
    pub kernel: usize,
    pub classes: usize,
}

impl BackboneConfig {
    pub fn new(classes: usize) -> Self {
        Self {
            widths: vec![16, 32, 64],
            kernel: 5,
            classes,
        }
    }

    pub fn layers(&self) -> usize {
        self.widths.len()
    }

    /// Feature dimension (width of the last block).
    pub fn d_out(&self) -> usize {
        self.widths.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(ModelError::Contract("backbone needs at least one block and widths >= 1".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(ModelError::Contract(format!("temporal kernel must be odd, got {}", self.kernel)));
        }
        if self.classes == 0 {
            return Err(ModelError::Contract("class count must be >= 1".into()));
        }
        Ok(())
    }
}

/// `Λ^{-1/2} (A + I) Λ^{-1/2}`, row-major `J x J`.
pub fn normalized_adjacency(topology: &SkeletonTopology) -> Result<Vec<f64>, ModelError> {
    topology.validate()?;
    let n = topology.joints();
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        a[i * n + i] = 1.0;
    }
    for &(i, j) in &topology.edges {
        a[i * n + j] = 1.0;
        a[j * n + i] = 1.0;
    }
    let degree: Vec<f64> = (0..n).map(|i| a[i * n..(i + 1) * n].iter().sum()).collect();
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] /= (degree[i] * degree[j]).sqrt();
        }
    }
    Ok(a)
}

#[derive(Clone, Copy, Debug)]
struct Block {
    spatial: ParamId,
    temporal: ParamId,
    bias: ParamId,
}

/// Backbone parameters live in `params` under `backbone.*` and `classifier.*`.
/// Detector heads may register further parameters in the same store so that one
/// graph and one optimizer cover the whole model.
#[derive(Clone, Debug)]
pub struct BackboneModel {
    pub config: BackboneConfig,
    pub topology: SkeletonTopology,
    pub adjacency: Vec<f64>,
    mixer: Arc<JointMixer>,
    pub params: ParamStore,
    blocks: Vec<Block>,
    cls_weight: ParamId,
    cls_bias: ParamId,
    pub seed: u64,
}

/// Graph handles produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    /// `[B, D_out]`
    pub features: Var,
    /// `[B, C]`
    pub logits: Var,
}

impl BackboneModel {
    /// Fresh model; spatial and temporal weights are He-uniform, biases zero.
    pub fn new(config: BackboneConfig, topology: SkeletonTopology, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let adjacency = normalized_adjacency(&topology)?;
        let mixer = Arc::new(JointMixer::from_dense(topology.joints(), &adjacency)?);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0]));
        let mut params = ParamStore::new();
        let mut blocks = Vec::new();
        let mut c_in = 2;
        for (k, &c_out) in config.widths.iter().enumerate() {
            let spatial = params.add_he_uniform(format!("backbone.{k}.spatial"), &[c_in, c_out], c_in, &mut rng);
            let temporal =
                params.add_he_uniform(format!("backbone.{k}.temporal"), &[config.kernel, c_out], config.kernel, &mut rng);
            let bias = params.add_zeros(format!("backbone.{k}.bias"), &[c_out]);
            blocks.push(Block { spatial, temporal, bias });
            c_in = c_out;
        }
        let cls_weight = params.add_he_uniform("classifier.weight", &[c_in, config.classes], c_in, &mut rng);
        let cls_bias = params.add_zeros("classifier.bias", &[config.classes]);
        Ok(Self {
            config,
            topology,
            adjacency,
            mixer,
            params,
            blocks,
            cls_weight,
            cls_bias,
            seed,
        })
    }

    /// Parameters of the blocks and the classifier, in registration order.
    pub fn backbone_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.blocks.iter().flat_map(|b| [b.spatial, b.temporal, b.bias]).collect();
        ids.extend([self.cls_weight, self.cls_bias]);
        ids
    }

    pub fn joints(&self) -> usize {
        self.topology.joints()
    }

    /// Records the forward pass for `input` of shape `[B, T, J, 2]`.
    pub fn forward_graph(&self, g: &mut Graph, input: Var) -> Result<Forward, ModelError> {
        let s = g.value(input).shape().to_vec();
        if s.len() != 4 || s[2] != self.joints() || s[3] != 2 || s[0] == 0 || s[1] == 0 {
            return Err(ModelError::Num(NumError::ShapeMismatch(format!(
                "backbone input {s:?}, expected [B, T, {}, 2]",
                self.joints()
            ))));
        }
        let mut x = input;
        for blk in &self.blocks {
            let mixed = g.joint_mix(x, &self.mixer)?;
            let w = g.param(&self.params, blk.spatial);
            let h = g.matmul(mixed, w)?;
            let kw = g.param(&self.params, blk.temporal);
            let h = g.temporal_conv(h, kw)?;
            let bias = g.param(&self.params, blk.bias);
            let h = g.add(h, bias)?;
            x = g.relu(h)?;
        }
        let features = g.mean_axis1(x)?;
        let w = g.param(&self.params, self.cls_weight);
        let bias = g.param(&self.params, self.cls_bias);
        let logits = g.matmul(features, w)?;
        let logits = g.add(logits, bias)?;
        Ok(Forward { features, logits })
    }

    /// Features and logits for one sequence (any frame count).
    pub fn forward(&self, seq: &SkeletonSequence) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
        let mut out = self.infer(std::slice::from_ref(seq))?;
        Ok(out.pop().expect("one output per input"))
    }

    /// Features and logits for each sequence, evaluated in batches.
    /// Sequences within one call must share a frame count.
    pub fn infer(&self, seqs: &[SkeletonSequence]) -> Result<Vec<(Vec<f64>, Vec<f64>)>, ModelError> {
        let mut out = Vec::with_capacity(seqs.len());
        let refs: Vec<&SkeletonSequence> = seqs.iter().collect();
        let mut g = Graph::new();
        for chunk in refs.chunks(INFER_BATCH) {
            g.reset();
            let input = g.constant(batch_tensor(chunk, self.joints())?);
            let f = self.forward_graph(&mut g, input)?;
            let (d, c) = (self.config.d_out(), self.config.classes);
            let feats = g.value(f.features).values();
            let logits = g.value(f.logits).values();
            for i in 0..chunk.len() {
                out.push((feats[i * d..(i + 1) * d].to_vec(), logits[i * c..(i + 1) * c].to_vec()));
            }
        }
        Ok(out)
    }
}

const INFER_BATCH: usize = 64;

#[cfg(test)]
mod tests;
