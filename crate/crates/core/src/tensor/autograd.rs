use std::cell::RefCell;
use std::fmt;
use std::sync::Arc;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Backward rule: maps the output gradient to one optional gradient per parent.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&Tensor<T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    value: Arc<Tensor<T>>,
    requires_grad: bool,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
}

/// Ordered record of executed operations.
///
/// Node ids are assigned in execution order, so a node's parents always have
/// smaller ids and a single reverse sweep is a valid topological order.
pub struct Tape<T: Scalar = f32> {
    nodes: RefCell<Vec<Node<T>>>,
    grads: RefCell<Vec<Option<Tensor<T>>>>,
    record: bool,
}

/// Handle to a value recorded on a [`Tape`].
pub struct Var<'t, T: Scalar = f32> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Scalar> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T: Scalar> Copy for Var<'_, T> {}

impl<T: Scalar> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            grads: RefCell::new(Vec::new()),
            record: true,
        }
    }

    /// A tape that never records backward rules. Forward results are identical.
    pub fn inference() -> Self {
        Self {
            record: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Input that does not receive a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.insert(Arc::new(value), false, Vec::new(), None)
    }

    /// Leaf that receives a gradient on [`Tape::backward`].
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf_shared(Arc::new(value))
    }

    pub fn leaf_shared(&self, value: Arc<Tensor<T>>) -> Var<'_, T> {
        let rg = self.record;
        self.insert(value, rg, Vec::new(), None)
    }

    pub fn constant_shared(&self, value: Arc<Tensor<T>>) -> Var<'_, T> {
        self.insert(value, false, Vec::new(), None)
    }

    /// Records an op. The backward rule is dropped when no parent needs a gradient.
    pub(crate) fn push<F>(
        &self,
        value: Tensor<T>,
        parents: &[Var<'_, T>],
        backward: F,
    ) -> Var<'_, T>
    where
        F: Fn(&Tensor<T>) -> Vec<Option<Tensor<T>>> + 'static,
    {
        self.push_shared(Arc::new(value), parents, backward)
    }

    pub(crate) fn push_shared<F>(
        &self,
        value: Arc<Tensor<T>>,
        parents: &[Var<'_, T>],
        backward: F,
    ) -> Var<'_, T>
    where
        F: Fn(&Tensor<T>) -> Vec<Option<Tensor<T>>> + 'static,
    {
        let rg = self.record && parents.iter().any(|p| p.requires_grad());
        if rg {
            let ids = parents.iter().map(|p| p.id).collect();
            self.insert(value, true, ids, Some(Box::new(backward)))
        } else {
            self.insert(value, false, Vec::new(), None)
        }
    }

    fn insert(
        &self,
        value: Arc<Tensor<T>>,
        requires_grad: bool,
        parents: Vec<usize>,
        backward: Option<BackwardFn<T>>,
    ) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value,
            requires_grad,
            parents,
            backward,
        });
        Var { tape: self, id }
    }

    /// Reverse sweep from a scalar loss. Returns the number of backward rules run.
    ///
    /// Gradients from a previous call are discarded.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<usize> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::Contract("loss belongs to a different tape".into()));
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::new();
        grads.resize_with(loss.id + 1, || None);
        grads[loss.id] = Some(Tensor::full(root.value.shape(), T::one()));
        let mut leaf_grads: Vec<Option<Tensor<T>>> = Vec::new();
        leaf_grads.resize_with(nodes.len(), || None);
        let mut visited = 0;

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            match &node.backward {
                Some(rule) => {
                    visited += 1;
                    let parent_grads = rule(&g);
                    debug_assert_eq!(parent_grads.len(), node.parents.len());
                    for (&pid, pg) in node.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !nodes[pid].requires_grad {
                            continue;
                        }
                        debug_assert_eq!(pg.shape(), nodes[pid].value.shape());
                        match &mut grads[pid] {
                            Some(acc) => acc.add_assign(&pg),
                            slot => *slot = Some(pg),
                        }
                    }
                }
                None => {
                    if node.requires_grad {
                        leaf_grads[id] = Some(g);
                    }
                }
            }
        }
        *self.grads.borrow_mut() = leaf_grads;
        Ok(visited)
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Arc<Tensor<T>> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Gradient populated by the last [`Tape::backward`], for leaves only.
    pub fn grad(&self) -> Option<Tensor<T>> {
        self.tape.grads.borrow().get(self.id).cloned().flatten()
    }
}
