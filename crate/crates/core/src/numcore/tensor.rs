use serde::{Deserialize, Serialize};

use super::NumError;

/// Dense row-major array of `f64` with an optional gradient buffer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    #[serde(skip)]
    grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Builds a tensor, rejecting shape/length disagreement and non-finite values.
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self, NumError> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(NumError::ShapeMismatch(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                expected,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(NumError::NonFinite("tensor construction".into()));
        }
        Ok(Self {
            shape,
            values,
            grad: None,
        })
    }

    pub(crate) fn from_parts_unchecked(shape: Vec<usize>, values: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        Self {
            shape,
            values,
            grad: None,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::from_parts_unchecked(shape.to_vec(), vec![0.0; n])
    }

    pub fn scalar(v: f64) -> Result<Self, NumError> {
        Self::new(vec![], vec![v])
    }

    pub fn vector(values: Vec<f64>) -> Result<Self, NumError> {
        Self::new(vec![values.len()], values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<f64>) -> Result<(), NumError> {
        if grad.len() != self.values.len() {
            return Err(NumError::ShapeMismatch(format!(
                "gradient of length {} for tensor of length {}",
                grad.len(),
                self.values.len()
            )));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// The single value of a scalar (or one-element) tensor.
    pub fn item(&self) -> Result<f64, NumError> {
        if self.values.len() != 1 {
            return Err(NumError::ShapeMismatch(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.values[0])
    }

    /// Row `i` of a tensor viewed as `[rows, last_dim]`.
    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.shape.last().copied().unwrap_or(1);
        &self.values[i * w..(i + 1) * w]
    }

    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Self, NumError> {
        Self::new(shape, self.values.clone())
    }
}
