//! Eigen-matching diversity loss for generative models.
//!
//! The loss builds a determinantal point process (DPP) kernel from the
//! features of a real batch and of a generated batch, decomposes both, and
//! penalizes mismatch in eigenvalue magnitudes and in eigenvector directions.
//! Gradients reach the generator through a differentiable symmetric
//! eigendecomposition.
//!
//! The crate is organized bottom-up:
//!
//! - [`autodiff`]: a small define-by-run reverse-mode tape over dense matrices.
//! - [`linalg`]: the symmetric eigensolver and its adjoint.
//! - [`loss`]: kernels, feature batches and the diversity loss with its
//!   ablation variants.
//! - [`models`]: MLP generator/discriminator, VAE encoder/decoder and Adam.
//! - [`data`]: Gaussian-mixture benchmarks (ring, grid, high-dimensional).
//! - [`metrics`]: mode coverage, sample quality, label KL and
//!   inference-via-optimization.
//! - [`train`]: GAN and VAE training loops and the efficiency sweeps.
//! - [`report`]: CSV, SVG and run-manifest emission used by the CLI.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod linalg;
pub mod loss;
pub mod metrics;
pub mod models;
pub mod report;
pub mod train;

pub use error::{Error, Result};
