//! Minimal reverse-mode autodiff engine.
//!
//! [`Tensor`] is the immutable dense value type; [`Tape`] records the
//! forward graph of one training step and replays it backwards. The op
//! set is exactly what the enhancement network needs: strided "same"
//! convolution and its adjoint, max-pooling, batch normalization,
//! leaky-ReLU/tanh, fully connected layers, concat/split/reshape and the
//! scalar reductions required by the losses.

mod adam;
mod gradcheck;
mod kernels;
mod params;
mod tape;

pub use adam::{adam_step, AdamParams, AdamState};
pub use gradcheck::{grad_check, grad_check_with_step, CheckedLoss, GradCheckEntry, GradCheckReport, FD_STEP_SCALE};
pub use params::{ParamKind, ParamStore};
pub use tape::{NodeId, Tape};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use rand::RngExt;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Dense row-major n-dimensional array with an optional gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Scalar> {
    dims: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    /// Builds a tensor, enforcing the shape/length contract and rejecting
    /// non-finite values.
    pub fn from_vec(dims: &[usize], data: Vec<T>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::contract(format!("zero-sized dim in {dims:?}")));
        }
        let numel: usize = dims.iter().product();
        if numel != data.len() {
            return Err(Error::contract(format!(
                "dims {dims:?} imply {numel} elements, got {}",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::non_finite("tensor construction"));
        }
        Ok(Tensor { dims: dims.to_vec(), data, requires_grad: false, grad: None })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let numel = dims.iter().product();
        Tensor { dims: dims.to_vec(), data: vec![T::zero(); numel], requires_grad: false, grad: None }
    }

    pub fn full(dims: &[usize], value: T) -> Self {
        let numel = dims.iter().product();
        Tensor { dims: dims.to_vec(), data: vec![value; numel], requires_grad: false, grad: None }
    }

    pub fn ones(dims: &[usize]) -> Self {
        Self::full(dims, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Tensor { dims: vec![1], data: vec![value], requires_grad: false, grad: None }
    }

    /// Uniform values in `(lo, hi)`, deterministic per seed.
    pub fn rand_uniform(dims: &[usize], lo: f64, hi: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let numel = dims.iter().product();
        let data = (0..numel)
            .map(|_| T::cast(rng.random_range(lo..hi)))
            .collect();
        Tensor { dims: dims.to_vec(), data, requires_grad: false, grad: None }
    }

    pub fn with_requires_grad(mut self, requires: bool) -> Self {
        self.requires_grad = requires;
        self
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Option<Vec<T>>) {
        if let Some(g) = &grad {
            assert_eq!(g.len(), self.data.len(), "grad must match tensor shape");
        }
        self.grad = grad;
    }

    /// Converts element precision; exact for f32 -> f64.
    pub fn cast_to<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| U::cast(v.as_f64())).collect(),
            requires_grad: self.requires_grad,
            grad: None,
        }
    }

    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::non_finite(context))
        }
    }
}

/// ceil(a / b) for positive operands.
pub(crate) fn ceil_div(a: usize, b: usize) -> usize {
    a.div_ceil(b)
}
