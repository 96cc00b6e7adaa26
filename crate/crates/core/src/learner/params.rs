use ndarray::Array2;

use crate::error::{Error, Result};

/// Handle into a [`ParameterStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
    pub(crate) first_moment: Array2<f64>,
    pub(crate) second_moment: Array2<f64>,
}

/// Named trainable arrays with gradient and optimizer buffers.
///
/// Insertion order is preserved; it is also the checkpoint order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    params: Vec<Param>,
    pub(crate) step: u64,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array2<f64>) -> Result<ParamId> {
        let name = name.into();
        if self.id(&name).is_some() {
            return Err(Error::Internal(format!("duplicate parameter {name:?}")));
        }
        let zeros = Array2::zeros(value.raw_dim());
        self.params.push(Param {
            name,
            grad: zeros.clone(),
            first_moment: zeros.clone(),
            second_moment: zeros,
            value,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn require(&self, name: &str, shape: (usize, usize)) -> Result<ParamId> {
        let id = self
            .id(name)
            .ok_or_else(|| Error::MissingArtifact(format!("parameter {name:?}")))?;
        let actual = self.value(id).dim();
        if actual != shape {
            return Err(Error::Shape {
                context: "stored parameter",
                expected: vec![shape.0, shape.1],
                actual: vec![actual.0, actual.1],
            });
        }
        Ok(id)
    }

    pub fn value(&self, id: ParamId) -> &Array2<f64> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Array2<f64> {
        &self.params[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.params[id.0].grad
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Drops gradients and optimizer moments, leaving only the values that a checkpoint keeps.
    pub fn reset_optimizer(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
            p.first_moment.fill(0.0);
            p.second_moment.fill(0.0);
        }
        self.step = 0;
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Optimizer steps taken so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn values_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.iter().all(|v| v.is_finite()))
    }
}
