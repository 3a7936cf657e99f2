//! Synthetic skeleton-action corpora: generation, stratified splitting,
//! class exclusion, augmentation and the line-delimited JSON corpus format.

mod augment;
mod generator;
mod io;
mod topology;

pub use augment::{augment_sequence, center_crop, mirror, AugmentConfig, AugmentPlan};
pub use generator::{generate_corpus, Family, GeneratorConfig, JitterScales, Motion};
pub use io::{load_corpus, read_corpus, save_corpus, write_corpus};
pub use topology::SkeletonTopology;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::seeds::derive_seed;

/// Frames seen by the network per sequence.
pub const CLIP_FRAMES: usize = 20;

#[derive(Debug, thiserror::Error)]
pub enum SkelError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `frames[t][j] = [x, y]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonSequence {
    pub frames: Vec<Vec<[f64; 2]>>,
    pub label: usize,
    pub source: String,
}

impl SkeletonSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn joints(&self) -> usize {
        self.frames.first().map_or(0, Vec::len)
    }

    /// Flat `[T * J * 2]` coordinates in frame-major order.
    pub fn flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.frames.iter().flatten().flatten().copied()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub topology: SkeletonTopology,
    pub sequences: Vec<SkeletonSequence>,
    pub class_names: Vec<String>,
    pub seed: u64,
}

impl Corpus {
    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.sequences.iter().map(|s| s.label).collect()
    }

    pub fn class_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.class_count()];
        for s in &self.sequences {
            if let Some(n) = sizes.get_mut(s.label) {
                *n += 1;
            }
        }
        sizes
    }

    /// Structural checks: topology, label range, joint counts, finite coordinates.
    pub fn validate(&self) -> Result<(), SkelError> {
        self.topology.validate()?;
        let joints = self.topology.joints();
        for (i, s) in self.sequences.iter().enumerate() {
            if s.label >= self.class_count() {
                return Err(SkelError::Contract(format!(
                    "sequence {i} has label {} but only {} classes exist",
                    s.label,
                    self.class_count()
                )));
            }
            if s.frames.is_empty() || s.frames.iter().any(|f| f.len() != joints) {
                return Err(SkelError::Contract(format!("sequence {i} does not have {joints} joints per frame")));
            }
            if s.flat().any(|v| !v.is_finite()) {
                return Err(SkelError::Contract(format!("sequence {i} has non-finite coordinates")));
            }
        }
        Ok(())
    }

    fn with_sequences(&self, sequences: Vec<SkeletonSequence>) -> Corpus {
        Corpus {
            topology: self.topology.clone(),
            sequences,
            class_names: self.class_names.clone(),
            seed: self.seed,
        }
    }
}

/// Per class, `ceil(n / folds)` sequences go to the test set and the rest to the
/// training set (`folds = 5` gives the 1:4 test:train ratio). Output keeps corpus order.
pub fn stratified_split(corpus: &Corpus, folds: usize, seed: u64) -> Result<(Corpus, Corpus), SkelError> {
    if folds < 2 {
        return Err(SkelError::Contract(format!("split needs at least 2 folds, got {folds}")));
    }
    let sizes = corpus.class_sizes();
    if let Some((c, &n)) = sizes.iter().enumerate().find(|(_, &n)| n < folds) {
        return Err(SkelError::Contract(format!(
            "class {c} has {n} sequences; stratified split needs at least {folds}"
        )));
    }
    let mut in_test = vec![false; corpus.len()];
    for class in 0..corpus.class_count() {
        let mut members: Vec<usize> = (0..corpus.len()).filter(|&i| corpus.sequences[i].label == class).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[class as u64]));
        members.shuffle(&mut rng);
        for &i in &members[..members.len().div_ceil(folds)] {
            in_test[i] = true;
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (s, t) in corpus.sequences.iter().zip(in_test) {
        if t {
            test.push(s.clone());
        } else {
            train.push(s.clone());
        }
    }
    Ok((corpus.with_sequences(train), corpus.with_sequences(test)))
}

/// Result of holding one class out of a corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassExclusion {
    /// Remaining classes, relabelled contiguously.
    pub in_dist: Corpus,
    /// Sequences of the held-out class, labelled 0 in a one-class corpus.
    pub ood: Corpus,
    /// `label_map[new] = original` for the in-distribution labels.
    pub label_map: Vec<usize>,
    pub excluded: usize,
}

impl ClassExclusion {
    /// Reassembles a corpus with the original labels (in-distribution first).
    pub fn remerge(&self) -> Corpus {
        let mut class_names = vec![String::new(); self.label_map.len() + 1];
        for (new, &orig) in self.label_map.iter().enumerate() {
            class_names[orig] = self.in_dist.class_names[new].clone();
        }
        class_names[self.excluded] = self.ood.class_names[0].clone();
        let sequences = self
            .in_dist
            .sequences
            .iter()
            .map(|s| SkeletonSequence {
                label: self.label_map[s.label],
                ..s.clone()
            })
            .chain(self.ood.sequences.iter().map(|s| SkeletonSequence {
                label: self.excluded,
                ..s.clone()
            }))
            .collect();
        Corpus {
            topology: self.in_dist.topology.clone(),
            sequences,
            class_names,
            seed: self.in_dist.seed,
        }
    }
}

pub fn exclude_class(corpus: &Corpus, class: usize) -> Result<ClassExclusion, SkelError> {
    if class >= corpus.class_count() {
        return Err(SkelError::Contract(format!(
            "class {class} out of range for {} classes",
            corpus.class_count()
        )));
    }
    let label_map: Vec<usize> = (0..corpus.class_count()).filter(|&c| c != class).collect();
    let relabel = |orig: usize| if orig > class { orig - 1 } else { orig };
    let mut in_seqs = Vec::new();
    let mut ood_seqs = Vec::new();
    for s in &corpus.sequences {
        if s.label == class {
            ood_seqs.push(SkeletonSequence { label: 0, ..s.clone() });
        } else {
            in_seqs.push(SkeletonSequence {
                label: relabel(s.label),
                ..s.clone()
            });
        }
    }
    Ok(ClassExclusion {
        in_dist: Corpus {
            topology: corpus.topology.clone(),
            sequences: in_seqs,
            class_names: label_map.iter().map(|&c| corpus.class_names[c].clone()).collect(),
            seed: corpus.seed,
        },
        ood: Corpus {
            topology: corpus.topology.clone(),
            sequences: ood_seqs,
            class_names: vec![corpus.class_names[class].clone()],
            seed: corpus.seed,
        },
        label_map,
        excluded: class,
    })
}
