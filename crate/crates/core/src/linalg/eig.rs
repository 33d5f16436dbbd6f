//! Symmetric eigendecomposition with a fixed ordering and sign convention,
//! plus the adjoint used to backpropagate through it.

use super::{gemm, Matrix, Operand};
use crate::error::{Error, Result};

/// Lower bound on `|λ_j - λ_i|` in the eigenvector adjoint. Keeps gradients
/// bounded on (near-)repeated eigenvalues at the cost of some bias there.
pub const EIG_GAP_EPS: f64 = 1e-6;

/// Eigenvalues in `[-NEG_CLAMP, 0)` are rounding noise of a PSD input.
const NEG_CLAMP: f64 = 1e-10;

/// An `n×n` symmetric matrix. Construction symmetrizes as `(K + Kᵀ)/2`.
#[derive(Clone, Debug, PartialEq)]
pub struct SymmetricMatrix {
    n: usize,
    values: Vec<f64>,
}

impl SymmetricMatrix {
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::InvalidArgument {
                op: "symmetric_matrix",
                reason: format!("{} values for order {n}", values.len()),
            });
        }
        let mut values = values;
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (values[i * n + j] + values[j * n + i]);
                values[i * n + j] = avg;
                values[j * n + i] = avg;
            }
        }
        Ok(Self { n, values })
    }

    pub fn from_matrix(m: &Matrix) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(Error::InvalidArgument {
                op: "symmetric_matrix",
                reason: format!("{}x{} is not square", m.rows(), m.cols()),
            });
        }
        Self::new(m.rows(), m.as_slice().to_vec())
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_vec(self.n, self.n, self.values.clone()).expect("square buffer")
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }
}

/// Eigenpairs of a symmetric matrix: eigenvalues in non-increasing order and
/// an orthonormal eigenvector matrix whose column `i` pairs with `lambdas[i]`.
///
/// Each eigenvector is sign-canonical: its entry of largest magnitude is
/// non-negative, the lowest index winning ties.
#[derive(Clone, Debug)]
pub struct EigenDecomposition {
    lambdas: Vec<f64>,
    vectors: Matrix,
}

impl EigenDecomposition {
    pub fn order(&self) -> usize {
        self.lambdas.len()
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    /// Eigenvectors as the columns of an `n×n` matrix.
    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    pub fn vector(&self, i: usize) -> Vec<f64> {
        self.vectors.column(i)
    }

    /// `V Λ Vᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        let n = self.order();
        let scaled = Matrix::from_fn(n, n, |i, j| self.vectors.get(i, j) * self.lambdas[j]);
        let mut out = Matrix::zeros(n, n);
        gemm(
            n,
            n,
            n,
            Operand::plain(scaled.as_slice(), n),
            Operand::transposed(self.vectors.as_slice(), n),
            out.as_mut_slice(),
            0.0,
        );
        out
    }
}

/// Full eigendecomposition of a symmetric matrix.
///
/// Deterministic for identical input bits. Eigenvalues within `1e-10` below
/// zero are clamped to zero, so Gram kernels report a non-negative spectrum.
pub fn sym_eig(k: &SymmetricMatrix) -> Result<EigenDecomposition> {
    let n = k.order();
    if n == 0 {
        return Err(Error::InvalidArgument {
            op: "sym_eig",
            reason: "empty matrix".into(),
        });
    }
    if k.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("sym_eig input"));
    }

    let m = faer::Mat::<f64>::from_fn(n, n, |i, j| k.values[i * n + j]);
    let evd = m
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|_| Error::NoConvergence)?;
    let d: Vec<f64> = (0..n).map(|i| evd.S().column_vector()[i]).collect();
    let u = evd.U();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[b].total_cmp(&d[a]).then(a.cmp(&b)));

    let mut lambdas = Vec::with_capacity(n);
    let mut vectors = Matrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        let lambda = d[src];
        lambdas.push(if (-NEG_CLAMP..0.0).contains(&lambda) {
            0.0
        } else {
            lambda
        });
        let column: Vec<f64> = (0..n).map(|i| u[(i, src)]).collect();
        let sign = canonical_sign(&column);
        for (i, x) in column.iter().enumerate() {
            vectors.set(i, col, sign * x);
        }
    }
    Ok(EigenDecomposition { lambdas, vectors })
}

fn canonical_sign(v: &[f64]) -> f64 {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Reverse-mode adjoint of [`sym_eig`].
///
/// Given upstream gradients for the eigenvalues and the eigenvector matrix,
/// returns `V (diag(ḡλ) + F ∘ (Vᵀ ḡV)) Vᵀ`, symmetrized, where
/// `F_ij = 1/(λ_j - λ_i)` off the diagonal. Gaps smaller than [`EIG_GAP_EPS`]
/// are clamped to that magnitude, keeping their sign.
pub fn eig_backward(
    decomp: &EigenDecomposition,
    grad_lambdas: &[f64],
    grad_vectors: &Matrix,
) -> Result<SymmetricMatrix> {
    let n = decomp.order();
    if grad_lambdas.len() != n || grad_vectors.rows() != n || grad_vectors.cols() != n {
        return Err(Error::InvalidArgument {
            op: "eig_backward",
            reason: format!(
                "order {n} decomposition got {} eigenvalue and {}x{} eigenvector gradients",
                grad_lambdas.len(),
                grad_vectors.rows(),
                grad_vectors.cols()
            ),
        });
    }
    let v = decomp.vectors.as_slice();

    // inner = Vᵀ ḡV, then masked by F, plus the eigenvalue diagonal.
    let mut inner = vec![0.0; n * n];
    gemm(
        n,
        n,
        n,
        Operand::transposed(v, n),
        Operand::plain(grad_vectors.as_slice(), n),
        &mut inner,
        0.0,
    );
    inner_to_core(&decomp.lambdas, grad_lambdas, &mut inner);
    Ok(conjugate_symmetrized(v, &inner, n))
}

/// Masks `Vᵀ ḡV` by the gap matrix and adds the eigenvalue diagonal, in place.
pub(crate) fn inner_to_core(lambdas: &[f64], grad_lambdas: &[f64], inner: &mut [f64]) {
    let n = lambdas.len();
    for i in 0..n {
        for j in 0..n {
            let idx = i * n + j;
            if i == j {
                inner[idx] = grad_lambdas[i];
            } else {
                inner[idx] *= inverse_gap(lambdas[j] - lambdas[i]);
            }
        }
    }
}

/// `(V C Vᵀ + (V C Vᵀ)ᵀ) / 2`.
pub(crate) fn conjugate_symmetrized(v: &[f64], core: &[f64], n: usize) -> SymmetricMatrix {
    let mut tmp = vec![0.0; n * n];
    gemm(n, n, n, Operand::plain(v, n), Operand::plain(core, n), &mut tmp, 0.0);
    let mut out = vec![0.0; n * n];
    gemm(
        n,
        n,
        n,
        Operand::plain(&tmp, n),
        Operand::transposed(v, n),
        &mut out,
        0.0,
    );
    SymmetricMatrix::new(n, out).expect("square buffer")
}

fn inverse_gap(gap: f64) -> f64 {
    if gap.abs() < EIG_GAP_EPS {
        if gap < 0.0 {
            -1.0 / EIG_GAP_EPS
        } else {
            1.0 / EIG_GAP_EPS
        }
    } else {
        1.0 / gap
    }
}
