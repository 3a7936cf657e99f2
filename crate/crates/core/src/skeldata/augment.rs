use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{SkelError, SkeletonSequence, SkeletonTopology, CLIP_FRAMES};

/// Training-time augmentation. Steps run in order: crop, noise, joint dropout, mirror.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    pub crop_len: usize,
    pub noise_sigma: f64,
    /// Chance that the dropout step runs for a sequence.
    pub dropout_chance: f64,
    /// Per-joint zeroing probability once dropout runs.
    pub joint_drop_prob: f64,
    /// Chance of the combined horizontal + vertical mirror.
    pub mirror_chance: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            crop_len: CLIP_FRAMES,
            noise_sigma: 0.005,
            dropout_chance: 0.5,
            joint_drop_prob: 0.1,
            mirror_chance: 0.5,
        }
    }
}

/// The random decisions of one augmentation, drawn once per sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentPlan {
    pub crop_start: usize,
    pub crop_len: usize,
    /// Per-joint offset added to every frame.
    pub noise: Vec<[f64; 2]>,
    /// Zeroed joints, when the dropout step fired.
    pub dropped: Option<Vec<bool>>,
    pub mirror: bool,
}

impl AugmentPlan {
    pub fn sample<R: Rng + ?Sized>(
        config: &AugmentConfig,
        frames: usize,
        joints: usize,
        rng: &mut R,
    ) -> Result<Self, SkelError> {
        if frames < config.crop_len {
            return Err(SkelError::Contract(format!(
                "sequence of {frames} frames is shorter than the {}-frame crop",
                config.crop_len
            )));
        }
        let crop_start = rng.random_range(0..=frames - config.crop_len);
        let normal = Normal::new(0.0, config.noise_sigma.max(0.0))
            .map_err(|e| SkelError::InvalidConfig(format!("noise sigma: {e}")))?;
        let noise = (0..joints).map(|_| [normal.sample(rng), normal.sample(rng)]).collect();
        let dropped = rng
            .random_bool(config.dropout_chance)
            .then(|| (0..joints).map(|_| rng.random_bool(config.joint_drop_prob)).collect());
        let mirror = rng.random_bool(config.mirror_chance);
        Ok(Self {
            crop_start,
            crop_len: config.crop_len,
            noise,
            dropped,
            mirror,
        })
    }

    /// Plan that only crops.
    pub fn crop_only(crop_start: usize, crop_len: usize, joints: usize) -> Self {
        Self {
            crop_start,
            crop_len,
            noise: vec![[0.0; 2]; joints],
            dropped: None,
            mirror: false,
        }
    }

    pub fn apply(&self, seq: &SkeletonSequence, topology: &SkeletonTopology) -> Result<SkeletonSequence, SkelError> {
        let joints = topology.joints();
        if seq.joints() != joints || self.noise.len() != joints {
            return Err(SkelError::Contract(format!(
                "sequence has {} joints, topology {joints}",
                seq.joints()
            )));
        }
        if self.crop_start + self.crop_len > seq.len() {
            return Err(SkelError::Contract(format!(
                "crop [{}, {}) exceeds {} frames",
                self.crop_start,
                self.crop_start + self.crop_len,
                seq.len()
            )));
        }
        let mut frames: Vec<Vec<[f64; 2]>> = seq.frames[self.crop_start..self.crop_start + self.crop_len]
            .iter()
            .map(|f| {
                f.iter()
                    .zip(&self.noise)
                    .map(|(p, n)| [p[0] + n[0], p[1] + n[1]])
                    .collect()
            })
            .collect();
        if let Some(dropped) = &self.dropped {
            for frame in &mut frames {
                for (p, &d) in frame.iter_mut().zip(dropped) {
                    if d {
                        *p = [0.0, 0.0];
                    }
                }
            }
        }
        let mut out = SkeletonSequence {
            frames,
            label: seq.label,
            source: seq.source.clone(),
        };
        if self.mirror {
            out = mirror(&out, topology);
        }
        Ok(out)
    }
}

/// Horizontal and vertical flip: both coordinates negated, left/right joints swapped.
/// An involution.
pub fn mirror(seq: &SkeletonSequence, topology: &SkeletonTopology) -> SkeletonSequence {
    let frames = seq
        .frames
        .iter()
        .map(|f| topology.swap.iter().map(|&s| [-f[s][0], -f[s][1]]).collect())
        .collect();
    SkeletonSequence {
        frames,
        label: seq.label,
        source: seq.source.clone(),
    }
}

pub fn augment_sequence<R: Rng + ?Sized>(
    seq: &SkeletonSequence,
    topology: &SkeletonTopology,
    config: &AugmentConfig,
    rng: &mut R,
) -> Result<SkeletonSequence, SkelError> {
    AugmentPlan::sample(config, seq.len(), topology.joints(), rng)?.apply(seq, topology)
}

/// Deterministic centred crop used at evaluation time.
pub fn center_crop(seq: &SkeletonSequence, len: usize) -> Result<SkeletonSequence, SkelError> {
    if seq.len() < len {
        return Err(SkelError::Contract(format!("sequence of {} frames is shorter than {len}", seq.len())));
    }
    let start = (seq.len() - len) / 2;
    Ok(SkeletonSequence {
        frames: seq.frames[start..start + len].to_vec(),
        label: seq.label,
        source: seq.source.clone(),
    })
}
