use crate::error::{AutodiffError, Result};
use crate::ops::{self, Op};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub op: Op<T>,
    pub requires_grad: bool,
    /// Accumulated gradient, kept on leaves only.
    pub grad: Option<Vec<T>>,
}

/// Append-only tape of tensor nodes.
///
/// Values are immutable once recorded. Leaf gradients accumulate across
/// repeated [`backward`](Graph::backward) calls until [`zero_grad`](Graph::zero_grad).
pub struct Graph<T: Scalar> {
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Gradients are only reported for leaves created with
    /// `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated on a leaf, if `backward` reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    /// Reverse-mode sweep from a single-element `loss`. Every leaf with
    /// `requires_grad` upstream of `loss` receives dloss/dleaf, added to any
    /// gradient already stored there.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let loss_shape = self.nodes[loss.0].value.shape().to_vec();
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(AutodiffError::NonScalarLoss(loss_shape));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                grads[idx] = Some(upstream);
                continue;
            }
            ops::backward_node(&self.nodes, idx, &upstream, &mut grads);
        }

        for (idx, grad) in grads.into_iter().enumerate() {
            let Some(grad) = grad else { continue };
            let node = &mut self.nodes[idx];
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            match &mut node.grad {
                Some(acc) => acc.iter_mut().zip(grad).for_each(|(a, g)| *a += g),
                None => node.grad = Some(grad),
            }
        }
        Ok(())
    }
}

#[cfg(any(test, feature = "testing"))]
impl<T: Scalar> Graph<T> {
    /// The branch every piecewise op took: the sign of each ReLU input and
    /// the selected index of each max-pool row. Two tapes of the same
    /// program with equal signatures were evaluated on the same smooth piece.
    pub fn branch_signature(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) => {
                    let input = self.nodes[a.0].value.data();
                    out.extend(input.iter().map(|&x| usize::from(x > T::zero())));
                }
                Op::Pool {
                    mode: ops::PoolMode::Max,
                    argmax,
                    ..
                } => out.extend_from_slice(argmax),
                _ => {}
            }
        }
        out
    }
}

/// Adds `delta` into the gradient slot of `v`, allocating on first touch.
pub(crate) fn accumulate<T: Scalar>(
    grads: &mut [Option<Vec<T>>],
    nodes: &[Node<T>],
    v: Var,
    delta: impl FnOnce(&mut [T]),
) {
    if !nodes[v.0].requires_grad {
        return;
    }
    let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.numel()]);
    delta(slot);
}
