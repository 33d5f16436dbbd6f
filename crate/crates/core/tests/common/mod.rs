//! Oracles and generators shared by the integration tests.
#![allow(dead_code)]

use gdpp::autodiff::{finite_diff_gradient, Tape, Tensor};
use gdpp::linalg::{sym_eig, Matrix};
use gdpp::loss::{build_kernel, extract_features, gdpp_with, FeatureBatch, GdppConfig, Origin};
use gdpp::models::gaussian;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Smallest difference between consecutive sorted eigenvalues.
pub fn min_gap(lambdas: &[f64]) -> f64 {
    lambdas
        .windows(2)
        .map(|w| (w[0] - w[1]).abs())
        .fold(f64::INFINITY, f64::min)
}

pub fn kernel_lambdas(m: &Matrix) -> Vec<f64> {
    let f = FeatureBatch::from_matrix(m, Origin::Fake).unwrap();
    sym_eig(&build_kernel(&f).unwrap()).unwrap().lambdas().to_vec()
}

/// Gaussian `d×b` activations whose normalized Gram kernel has every
/// eigenvalue gap at least `gap`.
pub fn activations_with_gap(rng: &mut impl Rng, d: usize, b: usize, gap: f64) -> Matrix {
    loop {
        let m = gaussian(rng, d, b);
        if b == 1 || min_gap(&kernel_lambdas(&m)) >= gap {
            return m;
        }
    }
}

/// Determinant by Laplace expansion along the first row.
pub fn cofactor_det(m: &Matrix) -> f64 {
    let n = m.rows();
    match n {
        0 => 1.0,
        1 => m.get(0, 0),
        _ => (0..n)
            .map(|j| {
                let minor = Matrix::from_fn(n - 1, n - 1, |r, c| m.get(r + 1, if c < j { c } else { c + 1 }));
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                sign * m.get(0, j) * cofactor_det(&minor)
            })
            .sum(),
    }
}

/// `‖a − b‖₂ / ‖b‖₂`, with the denominator floored at `1e-12`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let norm = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(1e-12)
}

pub fn gdpp_value(real: &FeatureBatch, acts: &Tensor, config: &GdppConfig) -> f64 {
    let tape = Tape::new();
    let x = tape.leaf(acts.clone());
    let fake = extract_features(&tape, &x, Origin::Fake).unwrap();
    gdpp_with(&tape, real, &fake, config).unwrap().total.item()
}

/// Analytic gradient of the loss with respect to raw fake activations
/// (before column normalization) and the central-difference estimate.
pub fn gdpp_gradients(real: &FeatureBatch, acts: &Matrix, config: &GdppConfig, h: f64) -> (Vec<f64>, Vec<f64>) {
    let a = Tensor::from_matrix(acts);
    let tape = Tape::new();
    let x = tape.leaf(a.clone());
    let fake = extract_features(&tape, &x, Origin::Fake).unwrap();
    let loss = gdpp_with(&tape, real, &fake, config).unwrap().total;
    let analytic = tape.backward(&loss).unwrap().wrt_or_zeros(&x);
    let numeric = finite_diff_gradient(|t| gdpp_value(real, t, config), &a, h);
    (analytic, numeric.values().to_vec())
}

/// Smallest lead of an eigenvector's largest `|entry|` over its second
/// largest, across the kernel's eigenvectors. The sign convention flips
/// where this reaches zero.
pub fn sign_margin(m: &Matrix) -> f64 {
    let f = FeatureBatch::from_matrix(m, Origin::Fake).unwrap();
    let e = sym_eig(&build_kernel(&f).unwrap()).unwrap();
    (0..e.order())
        .map(|i| {
            let mut a: Vec<f64> = e.vector(i).iter().map(|x| x.abs()).collect();
            a.sort_by(|x, y| y.total_cmp(x));
            if a.len() < 2 {
                f64::INFINITY
            } else {
                a[0] - a[1]
            }
        })
        .fold(f64::INFINITY, f64::min)
}
