use std::ops::Range;
use std::rc::Rc;

use super::{Binary, Input, Op, Shape, Tape, Tensor, Unary};
use crate::error::{Error, Result};
use crate::linalg::eig::{conjugate_symmetrized, inner_to_core};
use crate::linalg::{gemm, sym_eig, Operand, SymmetricMatrix, NORM_FLOOR};

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        left: a.shape,
        right: b.shape,
    }
}

/// Output shape of an elementwise op, allowing a `1×1` operand to broadcast.
fn broadcast_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Shape> {
    if a.shape == b.shape || b.shape == Shape::SCALAR {
        Ok(a.shape)
    } else if a.shape == Shape::SCALAR {
        Ok(b.shape)
    } else {
        Err(mismatch(op, a, b))
    }
}

#[inline]
fn at(values: &[f64], i: usize) -> f64 {
    if values.len() == 1 {
        values[0]
    } else {
        values[i]
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + eˣ)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl Unary {
    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Relu => x.max(0.0),
            Unary::Tanh => x.tanh(),
            Unary::Sigmoid => sigmoid(x),
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Softplus => softplus(x),
            Unary::Abs => x.abs(),
        }
    }

    /// dy/dx from the input and output values.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Tanh => 1.0 - y * y,
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Exp => y,
            Unary::Log => 1.0 / x,
            Unary::Softplus => sigmoid(x),
            Unary::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl Binary {
    fn name(self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        }
    }

    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            Binary::Add => a + b,
            Binary::Sub => a - b,
            Binary::Mul => a * b,
            Binary::Div => a / b,
        }
    }
}

impl Tape {
    /// `a · b`.
    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape.cols != b.shape.rows {
            return Err(mismatch("matmul", a, b));
        }
        let (m, k, n) = (a.shape.rows, a.shape.cols, b.shape.cols);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            Operand::plain(&a.values, k),
            Operand::plain(&b.values, n),
            &mut out,
            0.0,
        );
        self.record(&[a, b], Shape::new(m, n), out, || {
            Op::MatMul(Input::of(a), Input::of(b))
        })
    }

    pub fn transpose(&self, a: &Tensor) -> Result<Tensor> {
        let Shape { rows, cols } = a.shape;
        let mut out = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                out[j * rows + i] = a.values[i * cols + j];
            }
        }
        self.record(&[a], Shape::new(cols, rows), out, || Op::Transpose(Input::of(a)))
    }

    fn elementwise(&self, kind: Binary, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let shape = broadcast_shape(kind.name(), a, b)?;
        let out = (0..shape.numel())
            .map(|i| kind.apply(at(&a.values, i), at(&b.values, i)))
            .collect();
        self.record(&[a, b], shape, out, || {
            Op::Elementwise(kind, Input::of(a), Input::of(b))
        })
    }

    /// Elementwise `a + b`; either side may be `1×1`.
    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.elementwise(Binary::Add, a, b)
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.elementwise(Binary::Sub, a, b)
    }

    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.elementwise(Binary::Mul, a, b)
    }

    pub fn div(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.elementwise(Binary::Div, a, b)
    }

    pub fn add_scalar(&self, a: &Tensor, c: f64) -> Result<Tensor> {
        let out = a.values.iter().map(|v| v + c).collect();
        self.record(&[a], a.shape, out, || Op::AddScalar(Input::of(a)))
    }

    pub fn mul_scalar(&self, a: &Tensor, c: f64) -> Result<Tensor> {
        let out = a.values.iter().map(|v| v * c).collect();
        self.record(&[a], a.shape, out, || Op::MulScalar(Input::of(a), c))
    }

    pub fn neg(&self, a: &Tensor) -> Result<Tensor> {
        self.mul_scalar(a, -1.0)
    }

    fn unary(&self, kind: Unary, a: &Tensor) -> Result<Tensor> {
        let out = a.values.iter().map(|&v| kind.apply(v)).collect();
        self.record(&[a], a.shape, out, || Op::Unary(kind, Input::of(a)))
    }

    /// `max(x, 0)`; the subgradient at zero is zero.
    pub fn relu(&self, a: &Tensor) -> Result<Tensor> {
        self.unary(Unary::Relu, a)
    }

    pub fn tanh(&self, a: &Tensor) -> Result<Tensor> {
        self.unary(Unary::Tanh, a)
    }

    pub fn sigmoid(&self, a: &Tensor) -> Result<Tensor> {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn exp(&self, a: &Tensor) -> Result<Tensor> {
        self.unary(Unary::Exp, a)
    }

    pub fn log(&self, a: &Tensor) -> Result<Tensor> {
        self.unary(Unary::Log, a)
    }

    /// `log(1 + eˣ)`, evaluated stably. `-softplus(-x)` is `log σ(x)`.
    pub fn softplus(&self, a: &Tensor) -> Result<Tensor> {
        self.unary(Unary::Softplus, a)
    }

    pub fn abs(&self, a: &Tensor) -> Result<Tensor> {
        self.unary(Unary::Abs, a)
    }

    pub fn sum(&self, a: &Tensor) -> Result<Tensor> {
        let s = a.values.iter().sum();
        self.record(&[a], Shape::SCALAR, vec![s], || Op::Sum(Input::of(a)))
    }

    pub fn mean(&self, a: &Tensor) -> Result<Tensor> {
        let s = a.values.iter().sum::<f64>() / a.shape.numel() as f64;
        self.record(&[a], Shape::SCALAR, vec![s], || Op::Mean(Input::of(a)))
    }

    pub fn slice_rows(&self, a: &Tensor, rows: Range<usize>) -> Result<Tensor> {
        let Shape { rows: r, cols } = a.shape;
        if rows.start >= rows.end || rows.end > r {
            return Err(Error::InvalidArgument {
                op: "slice_rows",
                reason: format!("rows {rows:?} out of {}", a.shape),
            });
        }
        let out = a.values[rows.start * cols..rows.end * cols].to_vec();
        let start = rows.start;
        self.record(&[a], Shape::new(rows.len(), cols), out, || {
            Op::SliceRows(Input::of(a), start)
        })
    }

    pub fn slice_cols(&self, a: &Tensor, cols: Range<usize>) -> Result<Tensor> {
        let Shape { rows, cols: c } = a.shape;
        if cols.start >= cols.end || cols.end > c {
            return Err(Error::InvalidArgument {
                op: "slice_cols",
                reason: format!("columns {cols:?} out of {}", a.shape),
            });
        }
        let mut out = Vec::with_capacity(rows * cols.len());
        for i in 0..rows {
            out.extend_from_slice(&a.values[i * c + cols.start..i * c + cols.end]);
        }
        let start = cols.start;
        self.record(&[a], Shape::new(rows, cols.len()), out, || {
            Op::SliceCols(Input::of(a), start)
        })
    }

    /// Stacks tensors vertically; all must share a column count.
    pub fn concat_rows(&self, parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::InvalidArgument {
            op: "concat_rows",
            reason: "nothing to concatenate".into(),
        })?;
        let cols = first.shape.cols;
        let mut rows = 0;
        let mut out = Vec::new();
        for p in parts {
            if p.shape.cols != cols {
                return Err(mismatch("concat_rows", first, p));
            }
            rows += p.shape.rows;
            out.extend_from_slice(&p.values);
        }
        self.record(parts, Shape::new(rows, cols), out, || {
            Op::ConcatRows(parts.iter().map(|p| Input::of(p)).collect())
        })
    }

    /// Places tensors side by side; all must share a row count.
    pub fn concat_cols(&self, parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::InvalidArgument {
            op: "concat_cols",
            reason: "nothing to concatenate".into(),
        })?;
        let rows = first.shape.rows;
        let mut cols = 0;
        for p in parts {
            if p.shape.rows != rows {
                return Err(mismatch("concat_cols", first, p));
            }
            cols += p.shape.cols;
        }
        let mut out = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for p in parts {
                let c = p.shape.cols;
                out.extend_from_slice(&p.values[i * c..(i + 1) * c]);
            }
        }
        self.record(parts, Shape::new(rows, cols), out, || {
            Op::ConcatCols(parts.iter().map(|p| Input::of(p)).collect())
        })
    }

    /// ℓ2 norm of all entries.
    pub fn norm(&self, a: &Tensor) -> Result<Tensor> {
        let n = a.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.record(&[a], Shape::SCALAR, vec![n], || Op::Norm(Input::of(a)))
    }

    /// Sum of the elementwise product of two same-shaped tensors.
    pub fn dot(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape != b.shape {
            return Err(mismatch("dot", a, b));
        }
        let d = a.values.iter().zip(b.values.iter()).map(|(x, y)| x * y).sum();
        self.record(&[a, b], Shape::SCALAR, vec![d], || Op::Dot(Input::of(a), Input::of(b)))
    }

    /// Differentiable column-wise ℓ2 normalization; see
    /// [`l2_normalize_columns`](crate::linalg::l2_normalize_columns).
    pub fn normalize_columns(&self, a: &Tensor) -> Result<Tensor> {
        let m = crate::linalg::l2_normalize_columns(&a.to_matrix());
        self.record(&[a], a.shape, m.into_vec(), || Op::NormalizeColumns(Input::of(a)))
    }

    /// Eigenvalues (`n×1`, descending) and eigenvectors (`n×n`, as columns)
    /// of a square input, which is symmetrized first.
    pub fn sym_eig(&self, a: &Tensor) -> Result<(Tensor, Tensor)> {
        if a.shape.rows != a.shape.cols {
            return Err(Error::InvalidArgument {
                op: "sym_eig",
                reason: format!("{} is not square", a.shape),
            });
        }
        let n = a.shape.rows;
        let decomp = Rc::new(sym_eig(&SymmetricMatrix::new(n, a.values.to_vec())?)?);
        let lambdas = decomp.lambdas().to_vec();
        let vectors = decomp.vectors().as_slice().to_vec();
        let values = self.record(&[a], Shape::new(n, 1), lambdas, || {
            Op::EigValues(Input::of(a), Rc::clone(&decomp))
        })?;
        let vectors = self.record(&[a], Shape::new(n, n), vectors, || {
            Op::EigVectors(Input::of(a), Rc::clone(&decomp))
        })?;
        Ok((values, vectors))
    }
}

/// Scatters the upstream gradient `g` of one node onto its inputs.
pub(super) fn backprop(
    shape: Shape,
    output: &[f64],
    op: &Op,
    g: &[f64],
    emit: &mut dyn FnMut(&Input, Vec<f64>),
) -> Result<()> {
    match op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (m, k, n) = (a.shape.rows, a.shape.cols, shape.cols);
            if a.node.is_some() {
                let mut ga = vec![0.0; m * k];
                gemm(
                    m,
                    n,
                    k,
                    Operand::plain(g, n),
                    Operand::transposed(&b.values, n),
                    &mut ga,
                    0.0,
                );
                emit(a, ga);
            }
            if b.node.is_some() {
                let mut gb = vec![0.0; k * n];
                gemm(
                    k,
                    m,
                    n,
                    Operand::transposed(&a.values, k),
                    Operand::plain(g, n),
                    &mut gb,
                    0.0,
                );
                emit(b, gb);
            }
        }
        Op::Transpose(a) => {
            let Shape { rows, cols } = shape;
            let mut ga = vec![0.0; rows * cols];
            for i in 0..rows {
                for j in 0..cols {
                    ga[j * rows + i] = g[i * cols + j];
                }
            }
            emit(a, ga);
        }
        Op::Elementwise(kind, a, b) => {
            let reduce = |inp: &Input, full: Vec<f64>| -> Vec<f64> {
                if inp.shape.numel() == 1 && full.len() != 1 {
                    vec![full.iter().sum()]
                } else {
                    full
                }
            };
            let len = g.len();
            if a.node.is_some() {
                let ga: Vec<f64> = match kind {
                    Binary::Add | Binary::Sub => g.to_vec(),
                    Binary::Mul => (0..len).map(|i| g[i] * at(&b.values, i)).collect(),
                    Binary::Div => (0..len).map(|i| g[i] / at(&b.values, i)).collect(),
                };
                emit(a, reduce(a, ga));
            }
            if b.node.is_some() {
                let gb: Vec<f64> = match kind {
                    Binary::Add => g.to_vec(),
                    Binary::Sub => g.iter().map(|v| -v).collect(),
                    Binary::Mul => (0..len).map(|i| g[i] * at(&a.values, i)).collect(),
                    Binary::Div => (0..len)
                        .map(|i| {
                            let bv = at(&b.values, i);
                            -g[i] * at(&a.values, i) / (bv * bv)
                        })
                        .collect(),
                };
                emit(b, reduce(b, gb));
            }
        }
        Op::AddScalar(a) => emit(a, g.to_vec()),
        Op::MulScalar(a, c) => emit(a, g.iter().map(|v| v * c).collect()),
        Op::Unary(kind, a) => {
            let ga = g
                .iter()
                .zip(a.values.iter())
                .zip(output)
                .map(|((gi, &x), &y)| gi * kind.derivative(x, y))
                .collect();
            emit(a, ga);
        }
        Op::Sum(a) => emit(a, vec![g[0]; a.shape.numel()]),
        Op::Mean(a) => {
            let n = a.shape.numel();
            emit(a, vec![g[0] / n as f64; n]);
        }
        Op::SliceRows(a, start) => {
            let cols = a.shape.cols;
            let mut ga = vec![0.0; a.shape.numel()];
            ga[start * cols..start * cols + g.len()].copy_from_slice(g);
            emit(a, ga);
        }
        Op::SliceCols(a, start) => {
            let c = a.shape.cols;
            let w = shape.cols;
            let mut ga = vec![0.0; a.shape.numel()];
            for i in 0..shape.rows {
                ga[i * c + start..i * c + start + w].copy_from_slice(&g[i * w..(i + 1) * w]);
            }
            emit(a, ga);
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for p in parts {
                let len = p.shape.numel();
                if p.node.is_some() {
                    emit(p, g[offset..offset + len].to_vec());
                }
                offset += len;
            }
        }
        Op::ConcatCols(parts) => {
            let total = shape.cols;
            let mut offset = 0;
            for p in parts {
                let w = p.shape.cols;
                if p.node.is_some() {
                    let mut gp = Vec::with_capacity(p.shape.numel());
                    for i in 0..shape.rows {
                        gp.extend_from_slice(&g[i * total + offset..i * total + offset + w]);
                    }
                    emit(p, gp);
                }
                offset += w;
            }
        }
        Op::Norm(a) => {
            let n = output[0];
            let ga = if n > 0.0 {
                a.values.iter().map(|v| g[0] * v / n).collect()
            } else {
                vec![0.0; a.shape.numel()]
            };
            emit(a, ga);
        }
        Op::Dot(a, b) => {
            if a.node.is_some() {
                emit(a, b.values.iter().map(|v| g[0] * v).collect());
            }
            if b.node.is_some() {
                emit(b, a.values.iter().map(|v| g[0] * v).collect());
            }
        }
        Op::NormalizeColumns(a) => {
            let Shape { rows, cols } = a.shape;
            let mut ga = vec![0.0; rows * cols];
            for j in 0..cols {
                let norm = (0..rows).map(|i| a.values[i * cols + j].powi(2)).sum::<f64>().sqrt();
                if norm < NORM_FLOOR {
                    continue;
                }
                let proj: f64 = (0..rows).map(|i| output[i * cols + j] * g[i * cols + j]).sum();
                for i in 0..rows {
                    let idx = i * cols + j;
                    ga[idx] = (g[idx] - output[idx] * proj) / norm;
                }
            }
            emit(a, ga);
        }
        Op::EigValues(a, decomp) => {
            let n = decomp.order();
            let mut core = vec![0.0; n * n];
            inner_to_core(decomp.lambdas(), g, &mut core);
            let gk = conjugate_symmetrized(decomp.vectors().as_slice(), &core, n);
            emit(a, gk.as_slice().to_vec());
        }
        Op::EigVectors(a, decomp) => {
            let n = decomp.order();
            let v = decomp.vectors().as_slice();
            let mut inner = vec![0.0; n * n];
            gemm(
                n,
                n,
                n,
                Operand::transposed(v, n),
                Operand::plain(g, n),
                &mut inner,
                0.0,
            );
            let zeros = vec![0.0; n];
            inner_to_core(decomp.lambdas(), &zeros, &mut inner);
            let gk = conjugate_symmetrized(v, &inner, n);
            emit(a, gk.as_slice().to_vec());
        }
    }
    Ok(())
}
