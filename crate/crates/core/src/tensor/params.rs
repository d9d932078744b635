use crate::error::{Error, Result};

use super::{check_shape, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Param<F> {
    name: String,
    shape: Vec<usize>,
    values: Vec<F>,
}

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<F> {
    params: Vec<Param<F>>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], values: Vec<F>) -> Result<ParamId> {
        let name = name.into();
        let n = check_shape(shape)?;
        if n != values.len() {
            return Err(Error::Dimension {
                op: "param",
                lhs: shape.to_vec(),
                rhs: vec![values.len()],
            });
        }
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::Contract(format!("duplicate parameter name {name}")));
        }
        self.params.push(Param {
            name,
            shape: shape.to_vec(),
            values,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.params[id.0].shape
    }

    pub fn values(&self, id: ParamId) -> &[F] {
        &self.params[id.0].values
    }

    pub fn values_mut(&mut self, id: ParamId) -> &mut [F] {
        &mut self.params[id.0].values
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.values.len()).sum()
    }
}

/// Gradients aligned with a [`ParamStore`]. Parameters the loss did not reach
/// hold zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<F> {
    grads: Vec<Vec<F>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn zeros_like(store: &ParamStore<F>) -> Self {
        Gradients {
            grads: store.params.iter().map(|p| vec![F::zero(); p.values.len()]).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[F] {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [F] {
        &mut self.grads[id.0]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn global_norm(&self) -> F {
        self.grads
            .iter()
            .flat_map(|g| g.iter())
            .map(|&x| x * x)
            .sum::<F>()
            .sqrt()
    }

    pub fn scale(&mut self, s: F) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|x| *x *= s);
        }
    }
}
