use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn t(shape: &[usize], v: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    t(shape, &(0..n).map(|_| rng.random_range(lo..hi)).collect::<Vec<_>>())
}

#[test]
fn tensor_rejects_bad_construction() {
    assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
    assert!(Tensor::new(vec![2], vec![1.0, f64::NAN]).is_err());
    assert!(Tensor::new(vec![1], vec![f64::INFINITY]).is_err());
}

#[test]
fn forward_examples() {
    let mut g = Graph::new();
    let a = g.constant(t(&[2], &[1.0, 2.0]));
    let b = g.constant(t(&[2], &[3.0, 4.0]));
    let s = g.add(a, b).unwrap();
    assert_eq!(g.value(s).values(), &[4.0, 6.0]);

    let z = g.constant(t(&[2], &[0.0, 0.0]));
    let sm = g.softmax(z).unwrap();
    assert_eq!(g.value(sm).values(), &[0.5, 0.5]);

    let zero = g.constant(t(&[1], &[0.0]));
    let sg = g.sigmoid(zero).unwrap();
    assert_eq!(g.value(sg).values(), &[0.5]);
}

#[test]
fn shape_and_domain_errors() {
    let mut g = Graph::new();
    let a = g.constant(t(&[2, 3], &[1.0; 6]));
    let b = g.constant(t(&[2, 3], &[1.0; 6]));
    assert!(matches!(g.matmul(a, b), Err(NumError::ShapeMismatch(_))));
    let c = g.constant(t(&[4], &[1.0; 4]));
    assert!(matches!(g.add(a, c), Err(NumError::ShapeMismatch(_))));
    let neg = g.constant(t(&[2], &[1.0, 0.0]));
    assert!(matches!(g.log(neg), Err(NumError::Domain(_))));
    let big = g.constant(t(&[1], &[1000.0]));
    assert!(matches!(g.exp(big), Err(NumError::NonFinite(_))));
}

#[test]
fn backward_sum_is_ones() {
    let mut store = ParamStore::new();
    let p = store.add("p", t(&[3], &[0.1, -2.0, 5.0]));
    let mut g = Graph::new();
    let v = g.param(&store, p);
    let l = g.sum(v).unwrap();
    g.backward(l, &mut store).unwrap();
    assert_eq!(store.get(p).grad().unwrap(), &[1.0, 1.0, 1.0]);
}

#[test]
fn backward_mean_of_squares() {
    let mut store = ParamStore::new();
    let p = store.add("p", t(&[2], &[1.0, 2.0]));
    let mut g = Graph::new();
    let v = g.param(&store, p);
    let sq = g.mul(v, v).unwrap();
    let l = g.mean(sq).unwrap();
    g.backward(l, &mut store).unwrap();
    assert_eq!(store.get(p).grad().unwrap(), &[1.0, 2.0]);
}

#[test]
fn unreachable_params_get_zero_grad() {
    let mut store = ParamStore::new();
    let p = store.add("p", t(&[2], &[1.0, 2.0]));
    let q = store.add("q", t(&[3], &[1.0, 2.0, 3.0]));
    let mut g = Graph::new();
    let v = g.param(&store, p);
    let l = g.sum(v).unwrap();
    g.backward(l, &mut store).unwrap();
    assert_eq!(store.get(q).grad().unwrap(), &[0.0, 0.0, 0.0]);
}

#[test]
fn non_scalar_loss_rejected() {
    let mut store = ParamStore::new();
    let p = store.add("p", t(&[2], &[1.0, 2.0]));
    let mut g = Graph::new();
    let v = g.param(&store, p);
    assert!(matches!(g.backward(v, &mut store), Err(NumError::NonScalarLoss(_))));
}

#[test]
fn second_backward_without_reset_is_an_error() {
    let mut store = ParamStore::new();
    let p = store.add("p", t(&[2], &[1.0, 2.0]));
    let mut g = Graph::new();
    let v = g.param(&store, p);
    let l = g.sum(v).unwrap();
    g.backward(l, &mut store).unwrap();
    assert_eq!(g.backward(l, &mut store), Err(NumError::GraphConsumed));
    g.reset();
    let v = g.param(&store, p);
    let l = g.sum(v).unwrap();
    g.backward(l, &mut store).unwrap();
    assert_eq!(store.get(p).grad().unwrap(), &[1.0, 1.0]);
}

#[test]
fn softmax_cross_entropy_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let logits = store.add("logits", random_tensor(&mut rng, &[5, 4], -3.0, 3.0));
    let labels = vec![0, 3, 1, 1, 2];
    let err = grad_check(&mut store, &[logits], 1e-5, |g, s| {
        let x = g.param(s, logits);
        let ls = g.log_softmax(x)?;
        let picked = g.pick(ls, &labels)?;
        let m = g.mean(picked)?;
        g.scalar_mul(m, -1.0)
    })
    .unwrap();
    assert!(err <= 1e-4, "{err}");
}

#[test]
fn grad_check_is_tight_on_linear_loss() {
    let mut store = ParamStore::new();
    let p = store.add("p", t(&[4], &[0.5, -1.0, 2.0, 3.0]));
    let w = t(&[4], &[1.0, -2.0, 0.25, 7.0]);
    let err = grad_check(&mut store, &[p], 1e-3, |g, s| {
        let x = g.param(s, p);
        let c = g.constant(w.clone());
        let y = g.mul(x, c)?;
        g.sum(y)
    })
    .unwrap();
    assert!(err <= 1e-10, "{err}");
}

#[test]
fn max_last_tie_routes_no_gradient() {
    let mut store = ParamStore::new();
    let p = store.add("p", t(&[2, 3], &[1.0, 3.0, 3.0, 0.0, 2.0, 1.0]));
    let mut g = Graph::new();
    let v = g.param(&store, p);
    let m = g.max_last(v).unwrap();
    assert_eq!(g.value(m).values(), &[3.0, 2.0]);
    let l = g.sum(m).unwrap();
    g.backward(l, &mut store).unwrap();
    assert_eq!(store.get(p).grad().unwrap(), &[0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
}

#[test]
fn broadcasting_column_and_row() {
    let mut g = Graph::new();
    let m = g.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    let col = g.constant(t(&[2, 1], &[10.0, 100.0]));
    let row = g.constant(t(&[3], &[1.0, 0.0, -1.0]));
    let a = g.mul(m, col).unwrap();
    assert_eq!(g.value(a).values(), &[10.0, 20.0, 30.0, 400.0, 500.0, 600.0]);
    let b = g.add(m, row).unwrap();
    assert_eq!(g.value(b).values(), &[2.0, 2.0, 2.0, 5.0, 5.0, 5.0]);
}

fn joint_mixer() -> Arc<JointMixer> {
    let dense = [0.5, 0.5, 0.0, 0.5, 0.3, 0.2, 0.0, 0.2, 0.8];
    Arc::new(JointMixer::from_dense(3, &dense).unwrap())
}

/// Builds a loss exercising one primitive on random inputs and checks it against
/// central differences. Inputs are kept away from kinks and domain edges.
fn check_primitive(kind: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = rng.random_range(1..5);
    let cols = rng.random_range(1..5);
    let mut store = ParamStore::new();
    let a = store.add("a", random_tensor(&mut rng, &[rows, cols], -2.0, 2.0));
    let b = store.add("b", random_tensor(&mut rng, &[rows, cols], -2.0, 2.0));
    let pos = store.add("pos", random_tensor(&mut rng, &[rows, cols], 0.5, 3.0));
    let k = store.add("k", random_tensor(&mut rng, &[cols, 3], -1.0, 1.0));
    let bias = store.add("bias", random_tensor(&mut rng, &[cols], -1.0, 1.0));
    let frames = rng.random_range(1..6);
    let seqx = store.add("seqx", random_tensor(&mut rng, &[2, frames, 3, cols], -1.0, 1.0));
    let kern = store.add("kern", random_tensor(&mut rng, &[3, cols], -1.0, 1.0));
    // Fixed random weights make every loss depend non-trivially on every output.
    let weights = random_tensor(&mut rng, &[rows * cols * 3 * 2 * 6], -1.0, 1.0);
    let labels: Vec<usize> = (0..rows).map(|_| rng.random_range(0..cols)).collect();
    let mixer = joint_mixer();

    let all = [a, b, pos, k, bias, seqx, kern];
    grad_check(&mut store, &all, 1e-5, |g, s| {
        let (va, vb, vp) = (g.param(s, a), g.param(s, b), g.param(s, pos));
        let out = match kind {
            0 => {
                let vk = g.param(s, k);
                g.matmul(va, vk)?
            }
            1 => g.add(va, vb)?,
            2 => g.sub(va, vb)?,
            3 => g.mul(va, vb)?,
            4 => g.scalar_mul(va, -1.7)?,
            5 => {
                let shifted = g.add_scalar(vp, 0.1)?;
                g.relu(shifted)?
            }
            6 => g.sigmoid(va)?,
            7 => g.exp(va)?,
            8 => g.log(vp)?,
            9 => {
                let m = g.mean(va)?;
                g.scalar_mul(m, 3.0)?
            }
            10 => g.softmax(va)?,
            11 => g.log_softmax(va)?,
            12 => g.max_last(va)?,
            13 => g.pick(va, &labels)?,
            14 => {
                let vbias = g.param(s, bias);
                g.add(va, vbias)?
            }
            15 => {
                let x = g.param(s, seqx);
                let flat = g.reshape(x, &[2 * frames, 3, cols])?;
                g.joint_mix(flat, &mixer)?
            }
            16 => {
                let x = g.param(s, seqx);
                let w = g.param(s, kern);
                g.temporal_conv(x, w)?
            }
            17 => {
                let x = g.param(s, seqx);
                let r = g.reshape(x, &[2, frames * 3, cols])?;
                g.mean_axis1(r)?
            }
            18 => g.pairwise_sq_dist(va)?,
            19 => g.sqrt(vp)?,
            20 => g.abs(va)?,
            21 => g.square(va)?,
            22 => g.clamp(va, -0.5, 0.5)?,
            23 => {
                let x = g.param(s, seqx);
                let vk = g.param(s, k);
                g.matmul(x, vk)?
            }
            24 => {
                let x = g.param(s, seqx);
                g.joint_mix(x, &mixer)?
            }
            25 => {
                let x = g.param(s, seqx);
                g.mean_axis1(x)?
            }
            26 => {
                let x = g.param(s, seqx);
                let vbias = g.param(s, bias);
                g.sub(x, vbias)?
            }
            27 => {
                // `a` feeds three consumers, so its gradient both starts and accumulates.
                let h = g.sigmoid(va)?;
                let h = g.add(h, va)?;
                let vk = g.param(s, k);
                let y = g.matmul(h, vk)?;
                let z = g.matmul(va, vk)?;
                g.add(y, z)?
            }
            _ => unreachable!(),
        };
        let n = g.value(out).len();
        let shape = g.value(out).shape().to_vec();
        let w = g.constant(Tensor::new(shape, weights.values()[..n].to_vec())?);
        let prod = g.mul(out, w)?;
        g.sum(prod)
    })
    .unwrap()
}

#[test]
fn every_primitive_matches_finite_differences_on_random_inputs() {
    // 28 cases x 5 seeds = 140 randomized shape/value draws.
    for kind in 0..28 {
        for seed in 0..5u64 {
            let err = check_primitive(kind, 1000 * kind as u64 + seed);
            assert!(err <= 1e-4, "primitive {kind} seed {seed}: {err}");
        }
    }
}

#[test]
fn forward_is_bit_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut g = Graph::new();
        let x = g.constant(random_tensor(&mut rng, &[6, 5], -3.0, 3.0));
        let w = g.constant(random_tensor(&mut rng, &[5, 4], -1.0, 1.0));
        let y = g.matmul(x, w).unwrap();
        let s = g.softmax(y).unwrap();
        g.value(s).values().to_vec()
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn softmax_rows_are_probability_vectors(
        rows in 1usize..6,
        values in proptest::collection::vec(-50.0f64..50.0, 1..40),
    ) {
        let cols = values.len().div_ceil(rows).max(1);
        let mut data = values.clone();
        data.resize(rows * cols, 0.0);
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![rows, cols], data).unwrap());
        let s = g.softmax(x).unwrap();
        for r in 0..rows {
            let row = g.value(s).row(r);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }
}
