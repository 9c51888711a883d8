//! Named learnable parameters and persistent (non-learnable) state.

use std::cell::RefCell;
use std::rc::Rc;

use super::{Element, Shape, Tensor};

struct ParamInner<T: Element> {
    name: String,
    value: Tensor<T>,
    grad: Tensor<T>,
    // Adam slots; step count lives in the optimizer driving this parameter.
    moment1: Tensor<T>,
    moment2: Tensor<T>,
}

/// A named learnable tensor with its gradient accumulator and optimizer
/// moment slots. Cloning shares the underlying storage; all mutation happens
/// on the single training thread.
pub struct Param<T: Element> {
    inner: Rc<RefCell<ParamInner<T>>>,
}

impl<T: Element> Clone for Param<T> {
    fn clone(&self) -> Self {
        Param {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Element> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let shape = value.shape();
        Param {
            inner: Rc::new(RefCell::new(ParamInner {
                name: name.into(),
                value,
                grad: Tensor::zeros(shape),
                moment1: Tensor::zeros(shape),
                moment2: Tensor::zeros(shape),
            })),
        }
    }

    pub fn name(&self) -> String {
        self.inner.borrow().name.clone()
    }

    pub fn shape(&self) -> Shape {
        self.inner.borrow().value.shape()
    }

    pub fn value(&self) -> Tensor<T> {
        self.inner.borrow().value.clone()
    }

    pub fn grad(&self) -> Tensor<T> {
        self.inner.borrow().grad.clone()
    }

    pub fn moments(&self) -> (Tensor<T>, Tensor<T>) {
        let inner = self.inner.borrow();
        (inner.moment1.clone(), inner.moment2.clone())
    }

    pub fn set_value(&self, value: Tensor<T>) {
        let mut inner = self.inner.borrow_mut();
        assert_eq!(inner.value.shape(), value.shape(), "param value shape");
        inner.value = value;
    }

    pub fn set_moments(&self, m1: Tensor<T>, m2: Tensor<T>) {
        let mut inner = self.inner.borrow_mut();
        assert_eq!(inner.value.shape(), m1.shape(), "param moment1 shape");
        assert_eq!(inner.value.shape(), m2.shape(), "param moment2 shape");
        inner.moment1 = m1;
        inner.moment2 = m2;
    }

    /// Repeated backward passes accumulate here until [`Param::zero_grad`].
    pub fn accumulate_grad(&self, g: &Tensor<T>) {
        let mut inner = self.inner.borrow_mut();
        assert_eq!(inner.value.shape(), g.shape(), "param grad shape");
        inner.grad = inner.grad.add(g);
    }

    pub fn zero_grad(&self) {
        let mut inner = self.inner.borrow_mut();
        inner.grad = Tensor::zeros(inner.value.shape());
    }

    /// Identity of the shared storage; used to detect duplicate registration.
    pub fn ptr_id(&self) -> usize {
        Rc::as_ptr(&self.inner) as usize
    }

    /// Nudge a single coordinate (finite-difference probes in tests).
    pub fn perturb(&self, index: usize, delta: T) {
        let mut inner = self.inner.borrow_mut();
        let mut data = inner.value.data().to_vec();
        data[index] += delta;
        inner.value = Tensor::new(inner.value.shape(), data);
    }
}

/// Persistent non-learnable tensor (batch-norm running stats, spectral-norm
/// power-iteration vectors). Checkpointed alongside parameters.
pub struct Buffer<T: Element> {
    name: String,
    value: Rc<RefCell<Tensor<T>>>,
}

impl<T: Element> Clone for Buffer<T> {
    fn clone(&self) -> Self {
        Buffer {
            name: self.name.clone(),
            value: Rc::clone(&self.value),
        }
    }
}

impl<T: Element> Buffer<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        Buffer {
            name: name.into(),
            value: Rc::new(RefCell::new(value)),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn get(&self) -> Tensor<T> {
        self.value.borrow().clone()
    }

    pub fn set(&self, value: Tensor<T>) {
        let mut slot = self.value.borrow_mut();
        assert_eq!(slot.shape(), value.shape(), "buffer shape");
        *slot = value;
    }
}

/// Flat registry of the parameters and buffers of one model, in registration
/// order. Optimizers and checkpoints iterate this.
pub struct ParamSet<T: Element> {
    params: Vec<Param<T>>,
    buffers: Vec<Buffer<T>>,
}

impl<T: Element> Default for ParamSet<T> {
    fn default() -> Self {
        ParamSet {
            params: Vec::new(),
            buffers: Vec::new(),
        }
    }
}

impl<T: Element> ParamSet<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, param: Param<T>) -> Param<T> {
        debug_assert!(
            !self.params.iter().any(|p| p.ptr_id() == param.ptr_id()),
            "duplicate parameter registration: {}",
            param.name()
        );
        self.params.push(param.clone());
        param
    }

    pub fn register_buffer(&mut self, buffer: Buffer<T>) -> Buffer<T> {
        self.buffers.push(buffer.clone());
        buffer
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn buffers(&self) -> &[Buffer<T>] {
        &self.buffers
    }

    pub fn zero_grads(&self) {
        for p in &self.params {
            p.zero_grad();
        }
    }

    /// Total number of learnable scalar values.
    pub fn count_scalars(&self) -> usize {
        self.params.iter().map(|p| p.shape().count()).sum()
    }

    /// Absorb another set (submodule registration).
    pub fn extend(&mut self, other: ParamSet<T>) {
        self.params.extend(other.params);
        self.buffers.extend(other.buffers);
    }

    /// Deterministic digest of all parameter values, for isolation checks.
    pub fn value_checksum(&self) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for p in &self.params {
            for v in p.value().data() {
                let bits = Element::to_f64(*v).to_bits();
                hash ^= bits;
                hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        hash
    }
}
