//! Reverse-mode automatic differentiation over an explicit tape.
//!
//! Every differentiable operation is a method on [`Tape`] that evaluates
//! eagerly, appends a node, and returns a [`Var`] handle. Nodes are stored in
//! execution order, so [`Tape::backward`] is a single reverse sweep.

mod elementwise;
mod nn;
mod op;
mod shape;
mod special;

pub use elementwise::Unary;
pub use nn::PoolKind;
pub use special::{gaussian_kernel_1d, reflect_index};

use op::Op;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    inputs: Vec<Var>,
    requires_grad: bool,
}

/// Ordered record of executed operations.
///
/// A tape created with [`Tape::with_params`] binds parameter `i` of the store
/// to `Var(i)`, so layers can address parameters by [`ParamId`].
pub struct Tape<T: Scalar = f64> {
    nodes: Vec<Node<T>>,
    n_params: usize,
    checked: bool,
    grads: Option<Vec<Option<Tensor<T>>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    /// Empty tape in checked mode (non-finite results are rejected).
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            n_params: 0,
            checked: true,
            grads: None,
        }
    }

    /// Tape whose first `store.len()` nodes are the store's parameters.
    pub fn with_params(store: &ParamStore<T>, requires_grad: bool) -> Self {
        let mut tape = Self::new();
        for p in store.iter() {
            tape.nodes.push(Node {
                value: p.value.clone(),
                op: Op::Leaf,
                inputs: Vec::new(),
                requires_grad,
            });
        }
        tape.n_params = store.len();
        tape
    }

    pub fn set_checked(&mut self, checked: bool) {
        self.checked = checked;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    /// The variable bound to a store parameter.
    ///
    /// # Panics
    /// If the tape was not built from a store containing `id`.
    pub fn param(&self, id: ParamId) -> Var {
        assert!(
            id.index() < self.n_params,
            "parameter {} is not bound on this tape",
            id.index()
        );
        Var(id.index())
    }

    /// Records an input; gradients are collected for it when `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Result<Var> {
        if self.checked && !value.is_finite() {
            return Err(Error::Numeric("non-finite value in leaf tensor".into()));
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            inputs: Vec::new(),
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, false)
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

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if self.checked && !value.is_finite() {
            return Err(Error::Numeric(format!(
                "{} produced a non-finite value",
                op.name()
            )));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        // Nodes nobody differentiates through keep neither inputs nor saved state.
        let (op, inputs) = if requires_grad {
            (op, inputs.to_vec())
        } else {
            (Op::Leaf, Vec::new())
        };
        self.nodes.push(Node {
            value,
            op,
            inputs,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Populates gradients of `loss` with respect to every leaf that requires
    /// them. A tape can be differentiated once; call [`Tape::reset`] to reuse it.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.grads.is_some() {
            return Err(Error::Contract(
                "backward already ran on this tape; reset it first".into(),
            ));
        }
        if self.nodes.is_empty() {
            return Err(Error::Contract("backward on an empty tape".into()));
        }
        let loss_node = &self.nodes[loss.0];
        if loss_node.value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_node.value.shape()
            )));
        }

        let n = self.nodes.len();
        let mut pending: Vec<Option<Vec<T>>> = vec![None; n];
        let mut leaf_grads: Vec<Option<Tensor<T>>> = vec![None; n];
        if loss_node.requires_grad {
            pending[loss.0] = Some(vec![T::one()]);
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = pending[i].take() else { continue };
            let node = &self.nodes[i];
            if node.inputs.is_empty() {
                leaf_grads[i] = Some(Tensor::new(node.value.shape(), g)?);
                continue;
            }
            let need: Vec<bool> = node
                .inputs
                .iter()
                .map(|v| self.nodes[v.0].requires_grad)
                .collect();
            let input_grads = self.node_backward(node, &g, &need)?;
            for ((inp, ig), needed) in node.inputs.iter().zip(input_grads).zip(need) {
                let Some(ig) = ig else { continue };
                if !needed {
                    continue;
                }
                match &mut pending[inp.0] {
                    Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, &b)| *a += b),
                    slot => *slot = Some(ig),
                }
            }
        }

        // Leaves with no path to the loss get zero gradients.
        for (i, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && node.inputs.is_empty() && leaf_grads[i].is_none() {
                leaf_grads[i] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        self.grads = Some(leaf_grads);
        Ok(())
    }

    /// Gradient of the last backward pass for a leaf.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.as_ref()?.get(v.0)?.as_ref()
    }

    pub(crate) fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.as_mut()?.get_mut(v.0)?.take()
    }

    /// Drops every recorded node except bound parameters and forgets gradients.
    pub fn reset(&mut self) {
        self.nodes.truncate(self.n_params);
        self.grads = None;
    }

    fn node_backward(&self, node: &Node<T>, g: &[T], need: &[bool]) -> Result<Vec<Option<Vec<T>>>> {
        let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let out = &node.value;
        let grads = match &node.op {
            Op::Leaf => unreachable!("leaf nodes have no inputs"),
            Op::Binary(kind) => elementwise::binary_backward(*kind, &inputs, g, need),
            Op::AddScalar => vec![Some(g.to_vec())],
            Op::MulScalar(c) => vec![Some(g.iter().map(|&v| v * *c).collect())],
            Op::Unary(kind) => vec![Some(elementwise::unary_backward(*kind, inputs[0], out, g))],
            Op::Clamp { lo, hi } => vec![Some(elementwise::clamp_backward(inputs[0], *lo, *hi, g))],
            Op::Softmax { axis } => vec![Some(elementwise::softmax_backward(out, *axis, g))],
            Op::Sum => vec![Some(vec![g[0]; inputs[0].numel()])],
            Op::SumAxis { axis } => vec![Some(shape::sum_axis_backward(inputs[0], *axis, g))],
            Op::MaxAxis { argmax } | Op::MaxPool2d { argmax } => {
                vec![Some(shape::scatter_argmax(inputs[0].numel(), argmax, g))]
            }
            Op::Reshape => vec![Some(g.to_vec())],
            Op::Permute { perm } => vec![Some(shape::permute_backward(out.shape(), perm, g))],
            Op::Concat { axis } => shape::concat_backward(&inputs, *axis, g),
            Op::Narrow { axis, start } => {
                vec![Some(shape::narrow_backward(
                    inputs[0].shape(),
                    *axis,
                    *start,
                    out.shape(),
                    g,
                ))]
            }
            Op::Gather { index } => vec![Some(shape::gather_backward(inputs[0].numel(), index, g))],
            Op::MatMul => nn::matmul_backward(inputs[0], inputs[1], g, need),
            Op::Linear => nn::linear_backward(&inputs, g, need),
            Op::LayerNorm { eps, mean, rstd } => {
                nn::layer_norm_backward(&inputs, *eps, mean, rstd, g, need)
            }
            Op::Conv2d {
                stride,
                pad,
                groups,
            } => nn::conv2d_backward(&inputs, out.shape(), *stride, *pad, *groups, g, need),
            Op::AvgPool2d { k, stride } => {
                vec![Some(nn::avg_pool_backward(
                    inputs[0].shape(),
                    *k,
                    *stride,
                    g,
                ))]
            }
            Op::UpsampleBilinear { factor } => {
                vec![Some(nn::bilinear_backward(inputs[0].shape(), *factor, g))]
            }
            Op::UpsampleNearest { factor } => {
                vec![Some(nn::nearest_backward(inputs[0].shape(), *factor, g))]
            }
            Op::HaarFwd => vec![Some(special::haar_inverse_kernel(out.shape(), g))],
            Op::HaarInv => vec![Some(special::haar_forward_kernel(out.shape(), g))],
            Op::ReflectPadEnd { ph, pw } => {
                vec![Some(special::reflect_pad_backward(
                    inputs[0].shape(),
                    *ph,
                    *pw,
                    g,
                ))]
            }
            Op::GaussianBlur { kernel } => {
                vec![Some(special::blur_backward(inputs[0].shape(), kernel, g))]
            }
            Op::SelectiveScan { states } => special::scan_backward(&inputs, states, g, need),
        };
        Ok(grads)
    }
}
