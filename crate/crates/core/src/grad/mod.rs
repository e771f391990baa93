//! Minimal define-by-run reverse-mode autodiff over dense `f64` tensors of
//! rank at most 3.
//!
//! A [`Graph`] is rebuilt for every forward pass. Values are computed eagerly
//! as ops are recorded; [`Graph::backward`] walks the tape in reverse and
//! accumulates gradients into every leaf that requires them.

mod adam;
mod check;
mod ops;
mod suite;
mod tensor;

use std::collections::BTreeMap;

use thiserror::Error;

pub use adam::{adam_step, AdamState};
pub use check::{grad_check, grad_check_with, grad_compare, InputCheck};
pub use suite::{op_suite, probe_weights, weighted_sum, OpCheck, OPS};
pub use tensor::Tensor;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum GradError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("label {label} out of range for {classes} classes")]
    BadLabel { label: usize, classes: usize },
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("unknown parameter '{0}'")]
    MissingParam(String),
    #[error("finite-difference probe of input {input} element {index} crosses a relu kink")]
    KinkCrossed { input: usize, index: usize },
    #[error("loss does not change under finite-difference probes of input {0}")]
    Insensitive(usize),
}

pub type Result<T> = std::result::Result<T, GradError>;

/// Handle to a value recorded in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddScalar(Var),
    MulScalar(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sqrt(Var),
    Softmax(Var, usize),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        axis: usize,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        dilation: usize,
    },
    Sum(Var, usize),
    Mean(Var, usize),
    SumAll(Var),
    MeanAll(Var),
    Std(Var, usize),
    Concat(Vec<Var>, usize),
    Reshape(Var),
    Transpose(Var),
    CrossEntropy(Var, usize),
    Cosine(Var, Var),
    L2Normalize(Var, usize),
    AngularMargin {
        cos: Var,
        label: usize,
        margin: f64,
        scale: f64,
    },
}

#[derive(Debug, Clone)]
pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
    /// Op-specific values kept for the backward pass.
    pub(crate) saved: Vec<f64>,
}

/// Tape of recorded operations.
#[derive(Debug, Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
    leaf_grads: BTreeMap<usize, Vec<f64>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf value.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            saved: Vec::new(),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Which relu inputs are positive, in recording order.
    pub(crate) fn relu_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(x) => Some(&self.nodes[x.0].value),
                _ => None,
            })
            .flat_map(|t| t.data().iter().map(|&v| v > 0.0))
            .collect()
    }

    /// Accumulated gradient of a leaf, `None` if nothing has flowed into it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.leaf_grads.get(&v.0).map(Vec::as_slice)
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op, inputs: &[Var], saved: Vec<f64>) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            saved,
        });
        Var(self.nodes.len() - 1)
    }

    /// Back-propagates from a scalar `loss`, adding into leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss).to_vec();
        if self.value(loss).numel() != 1 {
            return Err(GradError::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                match self.leaf_grads.get_mut(&i) {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => {
                        self.leaf_grads.insert(i, g);
                    }
                }
                continue;
            }
            for (input, ig) in ops::backward_node(self, i, &g) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(ig),
                }
            }
        }
        Ok(())
    }

    /// Records every parameter of `store` as a leaf.
    pub fn bind(&mut self, store: &ParamStore) -> Bound {
        let vars = store
            .params
            .iter()
            .map(|(name, p)| (name.clone(), self.leaf(p.value.clone(), p.trainable)))
            .collect();
        Bound { vars }
    }

    /// Gradients of the bound parameters after [`Graph::backward`]; parameters
    /// that received nothing get zeros.
    pub fn param_grads(&self, bound: &Bound) -> BTreeMap<String, Vec<f64>> {
        bound
            .vars
            .iter()
            .map(|(name, &v)| {
                let g = self
                    .grad(v)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; self.value(v).numel()]);
                (name.clone(), g)
            })
            .collect()
    }
}

/// Parameter name to graph leaf mapping for one forward pass.
#[derive(Debug, Clone, Default)]
pub struct Bound {
    pub vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| GradError::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.vars.contains_key(name)
    }
}

/// A named trainable tensor with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Vec<f64>,
    pub trainable: bool,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = vec![0.0; value.numel()];
        Self {
            value,
            grad,
            trainable: true,
        }
    }
}

/// Named parameters in sorted-name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    pub params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(name.into(), Param::new(value));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).map(|p| &p.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn num_values(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, p)| p.value.numel())
            .sum()
    }

    /// Adds `scale * grads` into the accumulators.
    pub fn accumulate(&mut self, grads: &BTreeMap<String, Vec<f64>>, scale: f64) {
        for (name, g) in grads {
            if let Some(p) = self.params.get_mut(name) {
                p.grad.iter_mut().zip(g).for_each(|(a, b)| *a += scale * b);
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Marks parameters trainable iff `pred(name)` holds.
    pub fn set_trainable(&mut self, pred: impl Fn(&str) -> bool) {
        for (name, p) in self.params.iter_mut() {
            p.trainable = pred(name);
        }
    }
}
