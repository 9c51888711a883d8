//! Reverse-mode differentiation tape.
//!
//! A [`Graph`] records every operation applied to its [`Var`] handles. Node
//! ids grow in creation order, so reverse id order is a valid topological
//! order for the backward sweep. Values are immutable; gradients are
//! accumulated into [`Param`] slots by [`Graph::backward`].

use std::cell::{Cell, RefCell};

use super::param::Param;
use super::{Element, Shape, Tensor};
use crate::error::{Error, Result};

/// Forward-pass mode. Batch normalization is the only consumer: `Train` uses
/// batch statistics, `Eval` uses running statistics.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Mode {
    Train,
    Eval,
}

/// Given the gradient flowing into a node, produce gradients for each parent
/// (in parent order). `None` entries mark parents that do not need gradient.
pub(crate) type GradFn<T> = Box<dyn Fn(&Tensor<T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T: Element> {
    value: Tensor<T>,
    parents: Vec<usize>,
    grad_fn: Option<GradFn<T>>,
    param: Option<Param<T>>,
    needs_grad: bool,
}

/// Operation tape. One graph per forward/backward pass.
pub struct Graph<T: Element> {
    nodes: RefCell<Vec<Node<T>>>,
    mode: Mode,
    params_frozen: Cell<bool>,
    persistent_updates: Cell<bool>,
}

/// Handle to a node in a [`Graph`]. Cheap to copy.
#[derive(Clone, Copy)]
pub struct Var<'g, T: Element> {
    graph: &'g Graph<T>,
    id: usize,
}

impl<T: Element> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(#{}, {})", self.id, self.shape())
    }
}

impl<T: Element> Graph<T> {
    pub fn new(mode: Mode) -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            mode,
            params_frozen: Cell::new(false),
            persistent_updates: Cell::new(true),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Disable in-place updates of persistent state (batch-norm running
    /// stats, power-iteration vectors) without freezing parameters. The
    /// finite-difference harness uses this so repeated forward evaluations
    /// see identical state.
    pub fn set_persistent_updates(&self, enabled: bool) {
        self.persistent_updates.set(enabled);
    }

    /// True when layers should update their persistent state this forward:
    /// training mode, parameters not frozen, updates not suppressed.
    pub fn update_persistent(&self) -> bool {
        self.mode == Mode::Train && !self.params_frozen.get() && self.persistent_updates.get()
    }

    /// While frozen, [`Graph::param`] inserts parameters as constants: their
    /// values participate in the forward pass and gradients flow *through*
    /// the operations, but no gradient is accumulated into the parameters
    /// themselves. The discriminator forwards inside a generator step run
    /// frozen; persistent state (running stats, power-iteration vectors) is
    /// only updated when unfrozen.
    pub fn set_params_frozen(&self, frozen: bool) {
        self.params_frozen.set(frozen);
    }

    pub fn params_frozen(&self) -> bool {
        self.params_frozen.get()
    }

    /// Insert a value that never receives gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Vec::new(), None, None, false)
    }

    /// Insert a parameter leaf (or a constant, when frozen).
    pub fn param(&self, param: &Param<T>) -> Var<'_, T> {
        let value = param.value();
        if self.params_frozen.get() {
            self.constant(value)
        } else {
            self.push(value, Vec::new(), None, Some(param.clone()), true)
        }
    }

    pub(crate) fn push(
        &self,
        value: Tensor<T>,
        parents: Vec<usize>,
        grad_fn: Option<GradFn<T>>,
        param: Option<Param<T>>,
        needs_grad: bool,
    ) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value,
            parents,
            grad_fn,
            param,
            needs_grad,
        });
        Var { graph: self, id }
    }

    pub(crate) fn push_op(
        &self,
        value: Tensor<T>,
        parents: &[Var<'_, T>],
        grad_fn: GradFn<T>,
    ) -> Var<'_, T> {
        let needs_grad = parents.iter().any(|p| p.needs_grad());
        let ids = parents.iter().map(|p| p.id).collect();
        // Nodes that cannot receive gradient drop their backward closure
        // (and the buffers it captured) immediately.
        let grad_fn = if needs_grad { Some(grad_fn) } else { None };
        self.push(value, ids, grad_fn, None, needs_grad)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Run the backward sweep from a scalar loss, accumulating `dloss/dparam`
    /// into every reachable parameter. Repeated calls without an intervening
    /// zero-grad accumulate.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<()> {
        assert!(std::ptr::eq(loss.graph, self), "loss from another graph");
        if !loss.shape().is_scalar() {
            return Err(Error::invalid(
                "backward",
                format!("loss must be scalar, got shape {}", loss.shape()),
            ));
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor<T>>> = Vec::new();
        grads.resize_with(nodes.len(), || None);
        grads[loss.id] = Some(Tensor::scalar(T::one()));

        for id in (0..=loss.id).rev() {
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let node = &nodes[id];
            if let Some(param) = &node.param {
                param.accumulate_grad(&grad);
            }
            if let Some(grad_fn) = &node.grad_fn {
                let parent_grads = grad_fn(&grad);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (pid, pg) in node.parents.iter().zip(parent_grads) {
                    let Some(pg) = pg else { continue };
                    debug_assert_eq!(pg.shape(), nodes[*pid].value.shape());
                    grads[*pid] = Some(match grads[*pid].take() {
                        None => pg,
                        Some(acc) => acc.add(&pg),
                    });
                }
            }
        }
        Ok(())
    }
}

impl<'g, T: Element> Var<'g, T> {
    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Tensor<T> {
        self.graph.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Shape {
        self.graph.nodes.borrow()[self.id].value.shape()
    }

    pub fn needs_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].needs_grad
    }

    pub(crate) fn same_graph(&self, other: &Var<'g, T>) {
        assert!(
            std::ptr::eq(self.graph, other.graph),
            "vars belong to different graphs"
        );
    }
}
