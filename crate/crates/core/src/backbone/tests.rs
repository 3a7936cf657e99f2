use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numcore::{grad_check, Schedule};
use crate::skeldata::{center_crop, AugmentConfig, Corpus};

fn path3() -> SkeletonTopology {
    SkeletonTopology {
        name: "path3".into(),
        joint_names: vec!["a".into(), "b".into(), "c".into()],
        edges: vec![(0, 1), (1, 2)],
        swap: vec![2, 1, 0],
    }
}

fn random_seq(frames: usize, joints: usize, scale: f64, label: usize, rng: &mut ChaCha8Rng) -> SkeletonSequence {
    SkeletonSequence {
        frames: (0..frames)
            .map(|_| (0..joints).map(|_| [scale * rng.random_range(-1.0..1.0), scale * rng.random_range(-1.0..1.0)]).collect())
            .collect(),
        label,
        source: format!("toy/{label}"),
    }
}

fn small_config(classes: usize) -> BackboneConfig {
    BackboneConfig {
        widths: vec![4, 6],
        kernel: 3,
        classes,
    }
}

#[test]
fn adjacency_two_nodes() {
    let t = SkeletonTopology {
        name: "pair".into(),
        joint_names: vec!["a".into(), "b".into()],
        edges: vec![(0, 1)],
        swap: vec![0, 1],
    };
    assert_eq!(normalized_adjacency(&t).unwrap(), vec![0.5, 0.5, 0.5, 0.5]);
}

#[test]
fn adjacency_single_node() {
    let t = SkeletonTopology {
        name: "dot".into(),
        joint_names: vec!["a".into()],
        edges: vec![],
        swap: vec![0],
    };
    assert_eq!(normalized_adjacency(&t).unwrap(), vec![1.0]);
}

#[test]
fn adjacency_structure_body18() {
    let t = SkeletonTopology::body18();
    let a = normalized_adjacency(&t).unwrap();
    let n = t.joints();
    for i in 0..n {
        for j in 0..n {
            assert_eq!(a[i * n + j], a[j * n + i]);
            let bone = t.edges.contains(&(i, j)) || t.edges.contains(&(j, i));
            assert_eq!(a[i * n + j] != 0.0, i == j || bone, "({i}, {j})");
        }
    }
    let deg = |k: usize| 1.0 + t.edges.iter().filter(|&&(x, y)| x == k || y == k).count() as f64;
    let (neck, nose) = (1, 0);
    assert!((a[neck * n + nose] - 1.0 / (deg(neck) * deg(nose)).sqrt()).abs() < 1e-15);
}

#[test]
fn adjacency_rejects_disconnected() {
    let mut t = path3();
    t.edges.pop();
    assert!(normalized_adjacency(&t).is_err());
}

#[test]
fn config_validation() {
    let mut c = small_config(3);
    c.kernel = 4;
    assert!(c.validate().is_err());
    c.kernel = 5;
    c.widths.clear();
    assert!(c.validate().is_err());
    assert_eq!(BackboneConfig::new(7).d_out(), 64);
    assert_eq!(BackboneConfig::new(7).layers(), 3);
}

#[test]
fn zero_input_gives_classifier_bias() {
    let mut model = BackboneModel::new(BackboneConfig::new(5), SkeletonTopology::body18(), 3).unwrap();
    let id = model.params.id_of("classifier.bias").unwrap();
    let bias = vec![0.3, -1.0, 2.0, 0.0, 0.7];
    model.params.get_mut(id).values_mut().copy_from_slice(&bias);
    let seq = SkeletonSequence {
        frames: vec![vec![[0.0; 2]; 18]; 20],
        label: 0,
        source: "zero".into(),
    };
    let (features, logits) = model.forward(&seq).unwrap();
    assert!(features.iter().all(|&f| f == 0.0));
    assert_eq!(logits, bias);
}

#[test]
fn swapping_frames_changes_output() {
    let model = BackboneModel::new(small_config(2), path3(), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let seq = random_seq(2, 3, 1.0, 0, &mut rng);
    let mut swapped = seq.clone();
    swapped.frames.swap(0, 1);
    assert_ne!(model.forward(&seq).unwrap(), model.forward(&swapped).unwrap());

    let mut same = seq.clone();
    same.frames[1] = same.frames[0].clone();
    let mut same_swapped = same.clone();
    same_swapped.frames.swap(0, 1);
    assert_eq!(model.forward(&same).unwrap(), model.forward(&same_swapped).unwrap());
}

#[test]
fn output_shape_independent_of_joints() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for topo in [path3(), SkeletonTopology::body18()] {
        let j = topo.joints();
        let model = BackboneModel::new(BackboneConfig::new(6), topo, 0).unwrap();
        let (f, l) = model.forward(&random_seq(20, j, 0.5, 0, &mut rng)).unwrap();
        assert_eq!((f.len(), l.len()), (64, 6));
    }
}

#[test]
fn wrong_joint_count_is_rejected() {
    let model = BackboneModel::new(small_config(2), path3(), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(model.forward(&random_seq(5, 4, 1.0, 0, &mut rng)).is_err());
}

#[test]
fn batch_order_invariance() {
    let model = BackboneModel::new(BackboneConfig::new(4), SkeletonTopology::body18(), 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let seqs: Vec<_> = (0..7).map(|i| random_seq(20, 18, 0.5, i % 4, &mut rng)).collect();
    let out = model.infer(&seqs).unwrap();
    let mut rev = seqs.clone();
    rev.reverse();
    let mut out_rev = model.infer(&rev).unwrap();
    out_rev.reverse();
    assert_eq!(out, out_rev);
}

#[test]
fn cross_entropy_gradient_matches_finite_differences() {
    let mut model = BackboneModel::new(small_config(3), path3(), 11).unwrap();
    // Non-zero biases keep every ReLU away from its kink for this input.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for id in model.backbone_ids() {
        if model.params.name(id).ends_with("bias") {
            for v in model.params.get_mut(id).values_mut() {
                *v = rng.random_range(-0.3..0.3);
            }
        }
    }
    let seqs: Vec<_> = (0..3).map(|i| random_seq(2, 3, 1.0, i, &mut rng)).collect();
    let refs: Vec<&SkeletonSequence> = seqs.iter().collect();
    let input = batch_tensor(&refs, 3).unwrap();
    let labels = [0, 1, 2];
    let ids = model.backbone_ids();
    let probe = model.clone();
    let worst = grad_check(&mut model.params, &ids, 1e-6, |g, store| {
        let m = BackboneModel {
            params: store.clone(),
            ..probe.clone()
        };
        let x = g.constant(input.clone());
        let f = m.forward_graph(g, x).map_err(|e| match e {
            ModelError::Num(n) => n,
            other => panic!("{other}"),
        })?;
        let logp = g.log_softmax(f.logits)?;
        let p = g.pick(logp, &labels)?;
        let m = g.mean(p)?;
        g.scalar_mul(m, -1.0)
    })
    .unwrap();
    assert!(worst <= 1e-4, "relative error {worst}");
}

fn toy_corpus(per_class: usize, seed: u64) -> Corpus {
    // Class 0 is small jitter near the origin, class 1 spreads widely.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sequences = (0..2 * per_class)
        .map(|i| {
            let label = i % 2;
            random_seq(24, 3, if label == 0 { 0.1 } else { 1.0 }, label, &mut rng)
        })
        .collect();
    Corpus {
        topology: path3(),
        sequences,
        class_names: vec!["still".into(), "busy".into()],
        seed,
    }
}

fn toy_schedule(epochs: usize) -> Schedule {
    Schedule {
        epochs,
        batch_size: 16,
        lr: 0.01,
        decay_every: 0,
        decay_factor: 1.0,
    }
}

#[test]
fn separable_toy_is_learned() {
    let corpus = toy_corpus(40, 3);
    let mut model = BackboneModel::new(small_config(2), path3(), 5).unwrap();
    let report = train_classifier(&mut model, &corpus, &toy_schedule(30), &AugmentConfig::default(), 5).unwrap();
    let curve = report.loss_curve();
    assert_eq!(curve.len(), 30);
    assert!(curve[29] < curve[0], "{curve:?}");
    let crops: Vec<_> = corpus.sequences.iter().map(|s| center_crop(s, 20).unwrap()).collect();
    let out = model.infer(&crops).unwrap();
    let correct = out
        .iter()
        .zip(&corpus.sequences)
        .filter(|((_, l), s)| argmax(l) == s.label)
        .count();
    assert!(correct as f64 / corpus.len() as f64 >= 0.99, "{correct}/{}", corpus.len());
}

#[test]
fn training_is_deterministic() {
    let corpus = toy_corpus(10, 9);
    let run = || {
        let mut model = BackboneModel::new(small_config(2), path3(), 5).unwrap();
        let r = train_classifier(&mut model, &corpus, &toy_schedule(3), &AugmentConfig::default(), 5).unwrap();
        (model.params, r)
    };
    assert_eq!(run(), run());
}

#[test]
fn empty_or_mislabelled_corpus_is_rejected() {
    let mut corpus = toy_corpus(3, 1);
    let mut model = BackboneModel::new(small_config(2), path3(), 5).unwrap();
    let mut bad = corpus.clone();
    bad.sequences[0].label = 2;
    bad.class_names.push("x".into());
    assert!(train_classifier(&mut model, &bad, &toy_schedule(1), &AugmentConfig::default(), 0).is_err());
    corpus.sequences.clear();
    assert!(matches!(
        train_classifier(&mut model, &corpus, &toy_schedule(1), &AugmentConfig::default(), 0),
        Err(ModelError::Contract(_))
    ));
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let corpus = toy_corpus(4, 2);
    let mut model = BackboneModel::new(small_config(2), path3(), 5).unwrap();
    train_classifier(&mut model, &corpus, &toy_schedule(2), &AugmentConfig::default(), 1).unwrap();
    let ck = Checkpoint::from_model(&model);
    let text = ck.to_json().unwrap();
    let back = Checkpoint::from_json(&text).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.to_json().unwrap(), text);
    let restored = back.to_model().unwrap();
    assert_eq!(restored.params, model.params);
    assert_eq!(ck.hash().unwrap(), back.hash().unwrap());
}
