//! Wengert-list reverse-mode autodiff.
//!
//! Forward operations append nodes to a [`Tape`]; node indices grow
//! monotonically, so the recorded order is already a topological order of the
//! dataflow graph. `backward` seeds d(loss)/d(loss) = 1 and walks the list
//! once in reverse, invoking each node's vector-Jacobian product and
//! accumulating into the parents. Gradients of `requires_grad` leaves persist
//! on the tape; calling `backward` again without `zero_grads` accumulates.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a tape node. Cheap to copy; only valid for the tape it came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Given the gradient flowing into a node's output, the node's recorded
/// inputs, and its output value, produce the gradient for each input
/// (`None` for inputs that do not need one).
pub(crate) type Vjp<T> =
    Box<dyn Fn(&Tensor<T>, &[&Tensor<T>], &Tensor<T>) -> Vec<Option<Tensor<T>>> + Send + Sync>;

struct Node<T: Scalar> {
    value: Tensor<T>,
    parents: Vec<Var>,
    vjp: Option<Vjp<T>>,
    needs_grad: bool,
    is_leaf: bool,
}

pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    /// Persistent gradients for `requires_grad` leaves, index-aligned with
    /// `nodes`. Accumulated across `backward` calls.
    leaf_grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), leaf_grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a trainable leaf. The tensor is copied onto the tape.
    pub fn leaf(&mut self, value: &Tensor<T>) -> Var {
        self.push_node(value.clone(), Vec::new(), None, true, true)
    }

    /// Registers a non-trainable input (no gradient will be produced for it).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_node(value, Vec::new(), None, false, true)
    }

    /// Appends an operation node. `needs_grad` is inherited from the parents.
    pub(crate) fn push_op(&mut self, value: Tensor<T>, parents: Vec<Var>, vjp: Vjp<T>) -> Var {
        let needs = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.push_node(value, parents, Some(vjp), needs, false)
    }

    fn push_node(
        &mut self,
        value: Tensor<T>,
        parents: Vec<Var>,
        vjp: Option<Vjp<T>>,
        needs_grad: bool,
        is_leaf: bool,
    ) -> Var {
        let id = self.nodes.len();
        // Topological invariant: every input must already be on the tape.
        for p in &parents {
            assert!(p.0 < id, "tape node {} references future node {}", id, p.0);
        }
        self.nodes.push(Node { value, parents, vjp, needs_grad, is_leaf });
        self.leaf_grads.push(None);
        Var(id)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Accumulated gradient of a `requires_grad` leaf; `None` before any
    /// `backward` call or for constants and interior nodes.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaf_grads[v.0].as_ref()
    }

    pub fn zero_grads(&mut self) {
        for g in self.leaf_grads.iter_mut() {
            *g = None;
        }
    }

    /// Reverse sweep from a scalar loss. Each node is visited exactly once;
    /// leaf gradients accumulate into the tape's persistent slots.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let n = self.nodes.len();
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got {} elements",
                self.nodes[loss.0].value.numel()
            )));
        }
        if !self.nodes[loss.0].needs_grad {
            return Err(Error::Contract(
                "backward on a value with no requires_grad ancestry".to_string(),
            ));
        }

        let mut local: Vec<Option<Tensor<T>>> = vec![None; n];
        local[loss.0] = Some(Tensor::full(self.nodes[loss.0].value.shape(), T::one()));

        for i in (0..=loss.0).rev() {
            let Some(grad_out) = local[i].take() else { continue };
            let node = &self.nodes[i];
            if node.is_leaf {
                if node.needs_grad {
                    match &mut self.leaf_grads[i] {
                        Some(acc) => acc.add_assign(&grad_out),
                        slot @ None => *slot = Some(grad_out),
                    }
                }
                continue;
            }
            let Some(vjp) = &node.vjp else { continue };
            let inputs: Vec<&Tensor<T>> =
                node.parents.iter().map(|p| &self.nodes[p.0].value).collect();
            let input_grads = vjp(&grad_out, &inputs, &node.value);
            debug_assert_eq!(input_grads.len(), node.parents.len());
            for (p, g) in node.parents.clone().iter().zip(input_grads) {
                if !self.nodes[p.0].needs_grad {
                    continue;
                }
                let Some(g) = g else { continue };
                match &mut local[p.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }
}
