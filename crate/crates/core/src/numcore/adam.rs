use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::{NumError, ParamId, ParamStore};

static STEPS_TAKEN: AtomicU64 = AtomicU64::new(0);

/// Process-wide count of optimizer updates. Used to verify that evaluation-only
/// protocols never train.
pub fn optimizer_steps_taken() -> u64 {
    STEPS_TAKEN.load(Ordering::Relaxed)
}

/// Adam with bias correction. Moments are allocated lazily per parameter.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Option<Vec<f64>>>,
    second: Vec<Option<Vec<f64>>>,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Updates `params` from their populated gradients and clears those gradients.
    /// A parameter without a gradient is treated as having a zero gradient.
    pub fn step(&mut self, store: &mut ParamStore, params: &[ParamId], lr: f64) -> Result<(), NumError> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(NumError::InvalidArgument(format!("learning rate must be positive, got {lr}")));
        }
        if self.first.len() < store.len() {
            self.first.resize(store.len(), None);
            self.second.resize(store.len(), None);
        }
        self.step += 1;
        STEPS_TAKEN.fetch_add(1, Ordering::Relaxed);
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);

        for &id in params {
            let tensor = store.get_mut(id);
            let n = tensor.len();
            let grad = tensor.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
            let m = self.first[id.0].get_or_insert_with(|| vec![0.0; n]);
            let v = self.second[id.0].get_or_insert_with(|| vec![0.0; n]);
            if m.len() != n {
                return Err(NumError::ShapeMismatch(format!(
                    "Adam state for `{}` has length {}, parameter has {n}",
                    id.0,
                    m.len()
                )));
            }
            let values = tensor.values_mut();
            for i in 0..n {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                values[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            if values.iter().any(|x| !x.is_finite()) {
                return Err(NumError::NonFinite(format!("Adam update of `{}`", store.name(id))));
            }
            store.get_mut(id).clear_grad();
        }
        Ok(())
    }
}

/// Step-decay learning-rate schedule: `initial * factor^(epoch / period)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub decay_every: usize,
    pub decay_factor: f64,
}

impl Schedule {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = if self.decay_every == 0 { 0 } else { epoch / self.decay_every };
        self.lr * self.decay_factor.powi(drops as i32)
    }

    pub fn validate(&self) -> Result<(), NumError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(NumError::InvalidArgument("schedule needs epochs and batch size >= 1".into()));
        }
        if !(self.lr > 0.0) || !(self.decay_factor > 0.0) {
            return Err(NumError::InvalidArgument("schedule lr and decay factor must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Tensor;

    fn scalar_store(p: f64, g: f64) -> (ParamStore, ParamId) {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::vector(vec![p]).unwrap());
        store.get_mut(id).set_grad(vec![g]).unwrap();
        (store, id)
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::vector(vec![0.3, -1.2, 4.0]).unwrap());
        store.get_mut(id).set_grad(vec![0.0; 3]).unwrap();
        let mut adam = Adam::new();
        adam.step(&mut store, &[id], 0.01).unwrap();
        assert_eq!(store.get(id).values(), &[0.3, -1.2, 4.0]);
        assert!(store.get(id).grad().is_none());
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
        let (mut store, id) = scalar_store(0.0, 1.0);
        let mut adam = Adam::new();
        adam.step(&mut store, &[id], 0.001).unwrap();
        let p = store.get(id).values()[0];
        let expected = -0.001 * 1.0 / (1.0 + 1e-8);
        assert!((p - expected).abs() < 1e-15, "{p}");
    }

    #[test]
    fn repeated_identical_gradient_does_not_grow_step() {
        let (mut store, id) = scalar_store(0.5, 0.3);
        let mut adam = Adam::new();
        adam.step(&mut store, &[id], 0.01).unwrap();
        let after1 = store.get(id).values()[0];
        store.get_mut(id).set_grad(vec![0.3]).unwrap();
        adam.step(&mut store, &[id], 0.01).unwrap();
        let after2 = store.get(id).values()[0];
        let d1 = (after1 - 0.5).abs();
        let d2 = (after2 - after1).abs();
        assert!(d2 <= d1 * (1.0 + 1e-12), "{d1} {d2}");
        assert_eq!(adam.steps(), 2);
    }

    #[test]
    fn rejects_non_positive_lr() {
        let (mut store, id) = scalar_store(0.0, 1.0);
        assert!(Adam::new().step(&mut store, &[id], 0.0).is_err());
        assert!(Adam::new().step(&mut store, &[id], -1.0).is_err());
    }

    #[test]
    fn schedule_decays_stepwise() {
        let s = Schedule { epochs: 60, batch_size: 64, lr: 1e-3, decay_every: 25, decay_factor: 0.1 };
        assert_eq!(s.lr_at(0), 1e-3);
        assert_eq!(s.lr_at(24), 1e-3);
        assert!((s.lr_at(25) - 1e-4).abs() < 1e-18);
        assert!((s.lr_at(59) - 1e-5).abs() < 1e-18);
    }
}
