//! Dense tensors with a reverse-mode differentiation record.
//!
//! A [`Tensor`] is a reference-counted node holding a row-major `f64` buffer.
//! Operations on tensors that depend on a parameter record how they were
//! produced; [`Tensor::backward`] walks that record in reverse topological
//! order and accumulates `∂loss/∂θ` into every parameter it reaches.
//!
//! Only scalar-tensor and matched-shape arithmetic is supported. Gradients
//! accumulate across backward calls until [`Tensor::zero_grad`] is called.

mod autograd;
mod check;
pub mod checkpoint;
mod conv;
pub(crate) mod gemm;
mod ops;
mod sparse;

use std::cell::{Cell, Ref, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

pub use check::{grad_check, grad_check_coords, relative_error};
pub use sparse::{BinnedPlan, SparseColumns};

use autograd::Op;

thread_local! {
    static NO_GRAD_DEPTH: Cell<usize> = const { Cell::new(0) };
}

/// Runs `f` without recording operations for differentiation.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Guard;
    impl Drop for Guard {
        fn drop(&mut self) {
            NO_GRAD_DEPTH.with(|d| d.set(d.get() - 1));
        }
    }
    NO_GRAD_DEPTH.with(|d| d.set(d.get() + 1));
    let _guard = Guard;
    f()
}

fn recording() -> bool {
    NO_GRAD_DEPTH.with(|d| d.get() == 0)
}

pub(crate) struct Node {
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    op: Op,
    tracked: bool,
}

#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("tracked", &self.0.tracked)
            .finish()
    }
}

impl Tensor {
    fn leaf(shape: Vec<usize>, data: Vec<f64>, tracked: bool) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::dim("tensor", &shape, &[data.len()]));
        }
        Ok(Tensor(Rc::new(Node {
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            op: Op::Leaf,
            tracked,
        })))
    }

    /// A constant tensor; gradients never flow into it.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::leaf(shape.to_vec(), data, false)
    }

    /// A trainable parameter.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::leaf(shape.to_vec(), data, true)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::leaf(shape.to_vec(), vec![0.0; n], false).expect("shape product matches")
    }

    pub fn scalar(value: f64) -> Self {
        Self::leaf(Vec::new(), vec![value], false).expect("scalar")
    }

    /// Builds a 2-D constant from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Contract("ragged rows".into()));
        }
        Self::new(&[rows.len(), cols], rows.concat())
    }

    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<f64>, op: Op) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let tracked = recording() && op.inputs().iter().any(|t| t.0.tracked);
        let op = if tracked { op } else { Op::Leaf };
        Tensor(Rc::new(Node {
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            op,
            tracked,
        }))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        self.0.shape.iter().product()
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.0.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        self.0.data.borrow()[0]
    }

    /// Element of a 2-D tensor.
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.0.data.borrow()[row * self.0.shape[1] + col]
    }

    pub fn requires_grad(&self) -> bool {
        self.0.tracked
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.0.op, Op::Leaf)
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Overwrites the values in place. Used by optimizers and checkpoint
    /// loading; the shape is fixed.
    pub fn set_data(&self, values: &[f64]) -> Result<()> {
        let mut data = self.0.data.borrow_mut();
        if data.len() != values.len() {
            return Err(Error::dim("set_data", &self.0.shape, &[values.len()]));
        }
        data.copy_from_slice(values);
        Ok(())
    }

    pub fn update(&self, f: impl FnOnce(&mut [f64])) {
        f(&mut self.0.data.borrow_mut());
    }

    /// A constant copy detached from the differentiation record.
    pub fn detach(&self) -> Tensor {
        Self::leaf(self.0.shape.clone(), self.to_vec(), false).expect("same shape")
    }

    fn key(&self) -> usize {
        Rc::as_ptr(&self.0) as usize
    }

    /// Tracked nodes reachable from `self`, inputs before outputs.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut seen = std::collections::HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !t.0.tracked || !seen.insert(t.key()) {
                continue;
            }
            stack.push((t.clone(), true));
            for input in t.0.op.inputs() {
                if input.0.tracked && !seen.contains(&input.key()) {
                    stack.push((input.clone(), false));
                }
            }
        }
        order
    }

    /// Accumulates `∂self/∂θ` into the gradient of every parameter `θ`
    /// reachable from this scalar.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar, got shape {:?}",
                self.shape()
            )));
        }
        if !self.0.tracked {
            return Err(Error::Contract(
                "backward on a value that does not depend on any parameter".into(),
            ));
        }
        let order = self.topo_order();
        let mut grads: HashMap<usize, Vec<f64>> = HashMap::new();
        grads.insert(self.key(), vec![1.0]);
        for node in order.iter().rev() {
            let Some(g) = grads.remove(&node.key()) else {
                continue;
            };
            if node.is_leaf() {
                let mut slot = node.0.grad.borrow_mut();
                match slot.as_mut() {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => *slot = Some(g),
                }
            } else {
                node.0
                    .op
                    .backward(node, &g, &mut GradSink { grads: &mut grads });
            }
        }
        Ok(())
    }

    /// Smallest nonzero |input| seen by any relu in the recorded graph;
    /// `inf` when there is none. Finite-difference checks need this away
    /// from zero. Exact zeros are skipped: in bias-free layers they come from
    /// dead upstream paths and stay zero until an upstream relu crosses its
    /// own margin. Zero-valued biases void this, so start checks from
    /// nonzero biases.
    pub fn min_relu_margin(&self) -> f64 {
        self.topo_order()
            .iter()
            .filter_map(|t| match &t.0.op {
                Op::Relu(x) => x
                    .data()
                    .iter()
                    .filter(|v| **v != 0.0)
                    .map(|v| v.abs())
                    .reduce(f64::min),
                _ => None,
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Gradient buffers for tracked inputs during one backward pass.
pub(crate) struct GradSink<'a> {
    grads: &'a mut HashMap<usize, Vec<f64>>,
}

impl GradSink<'_> {
    /// Buffer to accumulate into, or `None` when `t` needs no gradient.
    pub(crate) fn slot(&mut self, t: &Tensor) -> Option<&mut [f64]> {
        if !t.0.tracked {
            return None;
        }
        let n = t.numel();
        Some(self.grads.entry(t.key()).or_insert_with(|| vec![0.0; n]))
    }
}
