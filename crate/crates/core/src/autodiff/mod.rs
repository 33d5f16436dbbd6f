//! Define-by-run reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every operation whose inputs carry gradients. Tensors
//! created with [`Tape::leaf`] are trainable; tensors created with
//! [`Tensor::constant`] never receive a gradient, and an operation whose
//! inputs are all constant produces a constant without touching the tape.
//!
//! ```
//! use gdpp::autodiff::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.leaf(Tensor::scalar(3.0));
//! let y = tape.mul(&x, &x).unwrap();
//! let grads = tape.backward(&y).unwrap();
//! assert_eq!(grads.wrt(&x).unwrap(), &[6.0]);
//! ```
//!
//! A tape serves exactly one backward pass. Training loops build a fresh
//! tape per step.

mod check;
mod ops;

pub use check::finite_diff_gradient;

use std::cell::{Cell, RefCell};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::linalg::{EigenDecomposition, Matrix};

/// Rows × columns. Every tensor is a matrix; scalars are `1×1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub rows: usize,
    pub cols: usize,
}

impl Shape {
    pub const fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols }
    }

    pub const SCALAR: Shape = Shape::new(1, 1);

    #[inline]
    pub fn numel(&self) -> usize {
        self.rows * self.cols
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}x{}]", self.rows, self.cols)
    }
}

/// Handle to a recorded node: the tape it lives on and its position there.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId {
    tape: u64,
    index: usize,
}

impl NodeId {
    pub fn index(&self) -> usize {
        self.index
    }
}

/// Dense row-major matrix value, optionally bound to a tape node.
#[derive(Clone)]
pub struct Tensor {
    shape: Shape,
    values: Rc<Vec<f64>>,
    node: Option<NodeId>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("node", &self.node)
            .field("values", &self.values)
            .finish()
    }
}

impl Tensor {
    pub fn constant(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || values.len() != rows * cols {
            return Err(Error::InvalidArgument {
                op: "tensor",
                reason: format!("{} values for shape [{rows}x{cols}]", values.len()),
            });
        }
        Ok(Self {
            shape: Shape::new(rows, cols),
            values: Rc::new(values),
            node: None,
        })
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_shape(Shape::SCALAR, vec![v])
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_shape(Shape::new(rows, cols), vec![0.0; rows * cols])
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Self::from_shape(Shape::new(rows, cols), vec![v; rows * cols])
    }

    pub fn from_matrix(m: &Matrix) -> Self {
        Self::from_shape(Shape::new(m.rows(), m.cols()), m.as_slice().to_vec())
    }

    fn from_shape(shape: Shape, values: Vec<f64>) -> Self {
        debug_assert_eq!(shape.numel(), values.len());
        Self {
            shape,
            values: Rc::new(values),
            node: None,
        }
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_vec(self.shape.rows, self.shape.cols, self.values.to_vec())
            .expect("tensor buffer matches its shape")
    }

    /// The single value of a `1×1` tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.shape, Shape::SCALAR, "item() on a non-scalar tensor");
        self.values[0]
    }

    pub fn node(&self) -> Option<NodeId> {
        self.node
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    /// Same values, cut from the tape.
    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape,
            values: Rc::clone(&self.values),
            node: None,
        }
    }
}

/// A recorded operand: the node it came from (if any) and its value.
#[derive(Clone)]
pub(crate) struct Input {
    pub node: Option<usize>,
    pub shape: Shape,
    pub values: Rc<Vec<f64>>,
}

impl Input {
    fn of(t: &Tensor) -> Self {
        Self {
            node: t.node.map(|n| n.index),
            shape: t.shape,
            values: Rc::clone(&t.values),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum Unary {
    Relu,
    Tanh,
    Sigmoid,
    Exp,
    Log,
    Softplus,
    Abs,
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

pub(crate) enum Op {
    Leaf,
    MatMul(Input, Input),
    Transpose(Input),
    Elementwise(Binary, Input, Input),
    AddScalar(Input),
    MulScalar(Input, f64),
    Unary(Unary, Input),
    Sum(Input),
    Mean(Input),
    SliceRows(Input, usize),
    SliceCols(Input, usize),
    ConcatRows(Vec<Input>),
    ConcatCols(Vec<Input>),
    Norm(Input),
    Dot(Input, Input),
    NormalizeColumns(Input),
    EigValues(Input, Rc<EigenDecomposition>),
    EigVectors(Input, Rc<EigenDecomposition>),
}

struct Node {
    op: Op,
    shape: Shape,
    output: Rc<Vec<f64>>,
}

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Records operations for one forward/backward pass.
pub struct Tape {
    id: u64,
    nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
            consumed: Cell::new(false),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers `value` as a trainable leaf and returns the bound tensor.
    pub fn leaf(&self, value: Tensor) -> Tensor {
        let node = self.push(Op::Leaf, value.shape, Rc::clone(&value.values));
        Tensor {
            node: Some(node),
            ..value
        }
    }

    fn push(&self, op: Op, shape: Shape, output: Rc<Vec<f64>>) -> NodeId {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, shape, output });
        NodeId {
            tape: self.id,
            index: nodes.len() - 1,
        }
    }

    /// Wraps a forward result: records `op` if any input is on the tape,
    /// otherwise returns a constant.
    fn record(&self, inputs: &[&Tensor], shape: Shape, values: Vec<f64>, op: impl FnOnce() -> Op) -> Result<Tensor> {
        let mut tracked = false;
        for t in inputs {
            if let Some(n) = t.node {
                if n.tape != self.id {
                    return Err(Error::StaleTape("operand belongs to a different tape"));
                }
                tracked = true;
            }
        }
        let values = Rc::new(values);
        let node = if tracked {
            Some(self.push(op(), shape, Rc::clone(&values)))
        } else {
            None
        };
        Ok(Tensor { shape, values, node })
    }

    /// Reverse pass from a scalar `loss`, returning the gradient of every
    /// leaf the loss depends on.
    ///
    /// Gradients accumulate across fan-out. The tape cannot be backpropagated
    /// twice.
    pub fn backward(&self, loss: &Tensor) -> Result<Gradients> {
        if loss.shape != Shape::SCALAR {
            return Err(Error::NonScalarLoss(loss.shape));
        }
        if self.consumed.replace(true) {
            return Err(Error::StaleTape("backward already ran on this tape"));
        }
        let Some(root) = loss.node else {
            return Ok(Gradients {
                tape: self.id,
                grads: Vec::new(),
            });
        };
        if root.tape != self.id {
            return Err(Error::StaleTape("loss was recorded on a different tape"));
        }

        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(root.index + 1);
        grads.resize_with(root.index + 1, || None);
        grads[root.index] = Some(vec![1.0]);

        for idx in (0..=root.index).rev() {
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            let node = &nodes[idx];
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(upstream);
                continue;
            }
            ops::backprop(
                node.shape,
                &node.output,
                &node.op,
                &upstream,
                &mut |input: &Input, g: Vec<f64>| {
                    if let Some(i) = input.node {
                        match &mut grads[i] {
                            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                            slot @ None => *slot = Some(g),
                        }
                    }
                },
            )?;
        }

        // only leaves keep their buffers
        for (idx, g) in grads.iter_mut().enumerate() {
            if !matches!(nodes[idx].op, Op::Leaf) {
                *g = None;
            }
        }
        Ok(Gradients { tape: self.id, grads })
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient with respect to `t`, or `None` for constants and leaves the
    /// loss does not depend on.
    pub fn wrt(&self, t: &Tensor) -> Option<&[f64]> {
        let node = t.node?;
        if node.tape != self.tape {
            return None;
        }
        self.grads.get(node.index)?.as_deref()
    }

    /// Like [`wrt`](Self::wrt), but yields zeros of the right shape for
    /// untouched leaves and constants.
    pub fn wrt_or_zeros(&self, t: &Tensor) -> Vec<f64> {
        self.wrt(t)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; t.shape.numel()])
    }

    pub fn get(&self, t: &Tensor) -> Option<Tensor> {
        self.wrt(t).map(|g| Tensor::from_shape(t.shape, g.to_vec()))
    }
}
