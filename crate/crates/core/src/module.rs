//! Trainable parameters and the stateful layer interface.

use rand::Rng;

use crate::error::Result;
use crate::ops::Mode;
use crate::tensor::{Element, Tensor};

/// How a parameter is counted by the cost model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamRole {
    Weight,
    Bias,
    /// Batch-norm scale or shift.
    NormAffine,
}

/// A named trainable array with its gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T: Element> {
    pub name: String,
    pub dims: Vec<usize>,
    pub role: ParamRole,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Element> Param<T> {
    pub fn zeros(name: impl Into<String>, dims: &[usize], role: ParamRole) -> Self {
        Self::filled(name, dims, role, T::zero())
    }

    pub fn filled(name: impl Into<String>, dims: &[usize], role: ParamRole, v: T) -> Self {
        let n = dims.iter().product();
        Param {
            name: name.into(),
            dims: dims.to_vec(),
            role,
            value: vec![v; n],
            grad: vec![T::zero(); n],
        }
    }

    /// Zero-mean normal initialization with the given variance.
    pub fn normal<R: Rng + ?Sized>(
        name: impl Into<String>,
        dims: &[usize],
        role: ParamRole,
        variance: f64,
        rng: &mut R,
    ) -> Self {
        let mut p = Self::zeros(name, dims, role);
        let std = T::from_f64(variance.sqrt());
        p.value.iter_mut().for_each(|v| *v = T::sample_normal(rng) * std);
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }

    pub fn accumulate(&mut self, delta: &[T]) {
        debug_assert_eq!(delta.len(), self.grad.len());
        for (g, &d) in self.grad.iter_mut().zip(delta) {
            *g = *g + d;
        }
    }
}

/// Non-trainable state persisted in checkpoints (batch-norm running statistics).
pub struct BufferMut<'a, T: Element> {
    pub name: String,
    pub value: &'a mut Vec<T>,
}

/// A layer with cached forward state and an analytic backward pass.
///
/// `backward` consumes the cache of the latest `forward`, accumulates
/// parameter gradients into each [`Param::grad`], and returns the gradient
/// with respect to the forward input. `infer` is the inference-mode forward
/// without caching, callable through a shared reference.
pub trait Module<T: Element>: Send + Sync {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>>;

    fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>>;

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>>;

    fn params(&self) -> Vec<&Param<T>>;

    fn params_mut(&mut self) -> Vec<&mut Param<T>>;

    fn buffers_mut(&mut self) -> Vec<BufferMut<'_, T>> {
        Vec::new()
    }

    fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}
