//! Dense row-major tensors with a reverse-mode tape.
//!
//! Shapes are limited to rank 1..=3 (a scalar is `[1]`). All model math is
//! expressed as [`Tape`] operations; [`grad_check`] compares the recorded
//! backward rules with central finite differences.

mod gradcheck;
pub mod kernels;
mod params;
mod scalar;
mod tape;
#[cfg(test)]
mod tests;

pub use gradcheck::{grad_check, grad_check_params, relative_error};
pub use params::{Gradients, ParamId, ParamStore};
pub use scalar::Scalar;
pub use tape::{NodeId, Tape};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    values: Vec<F>,
    requires_grad: bool,
    grad: Option<Vec<F>>,
}

pub(crate) fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > 3 || shape.contains(&0) {
        return Err(Error::Contract(format!(
            "tensor shape {shape:?} must have rank 1..=3 with positive extents"
        )));
    }
    Ok(shape.iter().product())
}

impl<F: Scalar> Tensor<F> {
    pub fn new(shape: &[usize], values: Vec<F>) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != values.len() {
            return Err(Error::Dimension {
                op: "tensor",
                lhs: shape.to_vec(),
                rhs: vec![values.len()],
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            values,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let n = check_shape(shape)?;
        Self::new(shape, vec![F::zero(); n])
    }

    pub fn scalar(x: F) -> Self {
        Tensor {
            shape: vec![1],
            values: vec![x],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> F) -> Result<Self> {
        let n = check_shape(shape)?;
        Self::new(shape, (0..n).map(&mut f).collect())
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [F] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<F> {
        self.values
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Extent of the last axis.
    pub fn last_dim(&self) -> usize {
        *self.shape.last().expect("rank >= 1")
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[F]> {
        self.grad.as_deref()
    }

    pub(crate) fn set_grad(&mut self, g: Vec<F>) {
        debug_assert_eq!(g.len(), self.values.len());
        self.grad = Some(g);
    }

    /// The single value of a `[1]` tensor.
    pub fn item(&self) -> F {
        debug_assert_eq!(self.values.len(), 1);
        self.values[0]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
