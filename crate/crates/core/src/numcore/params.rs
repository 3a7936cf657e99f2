use std::collections::BTreeMap;

use rand::Rng;

use super::{NumError, Tensor};

/// Handle to a tensor registered in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named learnable tensors. Registration order is stable and defines `ParamId`s.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    /// Registers a tensor drawn from U(-sqrt(6/fan_in), sqrt(6/fan_in)).
    pub fn add_he_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        self.add(name, Tensor::from_parts_unchecked(shape.to_vec(), values))
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn clear_grads(&mut self) {
        for t in &mut self.tensors {
            t.clear_grad();
        }
    }

    /// Snapshot of every parameter keyed by name, for checkpoints.
    pub fn to_named(&self) -> BTreeMap<String, Tensor> {
        self.names
            .iter()
            .cloned()
            .zip(self.tensors.iter().map(|t| {
                let mut t = t.clone();
                t.clear_grad();
                t
            }))
            .collect()
    }

    /// Overwrites parameter values from a name-keyed snapshot. Every registered
    /// parameter must be present with a matching shape; extra entries are an error.
    pub fn load_named(&mut self, named: &BTreeMap<String, Tensor>) -> Result<(), NumError> {
        if named.len() != self.tensors.len() {
            return Err(NumError::InvalidArgument(format!(
                "checkpoint has {} tensors, model expects {}",
                named.len(),
                self.tensors.len()
            )));
        }
        for (name, slot) in self.names.iter().zip(self.tensors.iter_mut()) {
            let src = named
                .get(name)
                .ok_or_else(|| NumError::InvalidArgument(format!("missing parameter `{name}`")))?;
            if src.shape() != slot.shape() {
                return Err(NumError::ShapeMismatch(format!(
                    "parameter `{name}`: expected {:?}, got {:?}",
                    slot.shape(),
                    src.shape()
                )));
            }
            *slot = Tensor::new(src.shape().to_vec(), src.values().to_vec())?;
        }
        Ok(())
    }
}
