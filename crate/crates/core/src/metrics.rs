//! Mode-collapse and sample-quality metrics against a known mixture.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::data::MixtureSpec;
use crate::error::Result;
use crate::linalg::Matrix;
use crate::models::{gaussian, Adam, AdamConfig, Mlp, Param};

/// Samples generated per evaluation checkpoint.
pub const EVAL_SAMPLES: usize = 2500;

/// One evaluation checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iteration: usize,
    pub modes_captured: usize,
    pub hq_fraction: f64,
    pub mode_kl: f64,
    pub ivo_mse: Option<f64>,
    pub wall_seconds: f64,
}

/// Nearest center (lowest index on ties) for each sample row, and the
/// distance to it in units of `spec.sigma`.
pub fn assign_modes(samples: &Matrix, spec: &MixtureSpec) -> (Vec<usize>, Vec<f64>) {
    let n = samples.rows();
    let mut labels = Vec::with_capacity(n);
    let mut distances = Vec::with_capacity(n);
    for i in 0..n {
        let row = samples.row(i);
        let mut best = 0;
        let mut best_d2 = f64::INFINITY;
        for (k, c) in spec.centers.iter().enumerate() {
            let d2: f64 = row.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 < best_d2 {
                best_d2 = d2;
                best = k;
            }
        }
        labels.push(best);
        distances.push(best_d2.sqrt() / spec.sigma);
    }
    (labels, distances)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coverage {
    pub modes_captured: usize,
    pub hq_fraction: f64,
}

/// A sample is high quality when it lies within `hq_threshold_sigmas` of its
/// nearest center; a mode is captured when at least one high-quality sample
/// is assigned to it. The fraction is over all samples.
pub fn coverage_metrics(samples: &Matrix, spec: &MixtureSpec) -> Coverage {
    let (labels, distances) = assign_modes(samples, spec);
    let mut captured = vec![false; spec.modes()];
    let mut hq = 0usize;
    for (&k, &d) in labels.iter().zip(&distances) {
        if d <= spec.hq_threshold_sigmas {
            hq += 1;
            captured[k] = true;
        }
    }
    Coverage {
        modes_captured: captured.iter().filter(|&&c| c).count(),
        hq_fraction: if labels.is_empty() {
            0.0
        } else {
            hq as f64 / labels.len() as f64
        },
    }
}

/// `KL(p̂ ‖ uniform)` where `p̂` is the nearest-center label distribution of
/// all samples, smoothed by `ε = 1/(10n)` per mode and renormalized.
pub fn mode_kl(samples: &Matrix, spec: &MixtureSpec) -> f64 {
    let (labels, _) = assign_modes(samples, spec);
    label_kl(&labels, spec.modes())
}

pub(crate) fn label_kl(labels: &[usize], modes: usize) -> f64 {
    let n = labels.len().max(1) as f64;
    let mut counts = vec![0usize; modes];
    for &k in labels {
        counts[k] += 1;
    }
    let eps = 1.0 / (10.0 * n);
    let norm = 1.0 + modes as f64 * eps;
    let uniform = 1.0 / modes as f64;
    counts
        .iter()
        .map(|&c| {
            let p = (c as f64 / n + eps) / norm;
            p * (p / uniform).ln()
        })
        .sum::<f64>()
        .max(0.0)
}

/// Something that maps latent codes (`latent_dim × k`) to samples (`d × k`)
/// on a tape, column by column.
pub trait LatentGenerator {
    fn latent_dim(&self) -> usize;
    fn generate(&self, tape: &Tape, z: &Tensor) -> Result<Tensor>;
}

impl LatentGenerator for Mlp {
    fn latent_dim(&self) -> usize {
        self.spec().input_dim()
    }

    fn generate(&self, tape: &Tape, z: &Tensor) -> Result<Tensor> {
        Ok(self.frozen().forward(tape, z)?.output)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IvoConfig {
    pub steps: usize,
    pub lr: f64,
    pub restarts: usize,
}

impl Default for IvoConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            lr: 0.01,
            restarts: 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IvoResult {
    /// Mean over successful targets of the best `‖x - G(z)‖²`.
    pub mean_mse: f64,
    /// Targets whose optimization went non-finite on every restart.
    pub failed: usize,
}

/// Inference via optimization: for each target row `x`, search for the
/// latent code minimizing `‖x - G(z)‖²` with Adam from a random start, keep
/// the best of `restarts` attempts, and average.
///
/// All targets are optimized together as one batch; columns never interact,
/// so this is equivalent to optimizing them one at a time.
pub fn ivo(targets: &Matrix, g: &impl LatentGenerator, config: &IvoConfig, rng: &mut impl Rng) -> Result<IvoResult> {
    let k = targets.rows();
    let x = Tensor::from_matrix(&targets.transpose());
    let latent = g.latent_dim();
    let mut best = vec![f64::INFINITY; k];

    for _ in 0..config.restarts.max(1) {
        let mut z = vec![Param {
            name: "z".into(),
            value: gaussian(rng, latent, k),
        }];
        let mut adam = Adam::new(
            AdamConfig {
                lr: config.lr,
                ..AdamConfig::VAE
            },
            &z,
        );
        let mut alive = vec![true; k];
        for _ in 0..config.steps {
            let tape = Tape::new();
            let zt = tape.leaf(Tensor::from_matrix(&z[0].value));
            let diff = tape.sub(&x, &g.generate(&tape, &zt)?)?;
            let loss = tape.sum(&tape.mul(&diff, &diff)?)?;
            let mut grad = tape.backward(&loss)?.wrt_or_zeros(&zt);
            // a diverged column is frozen; the others carry on
            for col in 0..k {
                let bad = (0..latent).any(|r| !grad[r * k + col].is_finite() || !z[0].value.get(r, col).is_finite());
                if bad {
                    alive[col] = false;
                }
                if !alive[col] {
                    for r in 0..latent {
                        grad[r * k + col] = 0.0;
                    }
                }
            }
            adam.step(&mut z, &[grad])?;
        }
        let per_target = column_sq_errors(&x, g, &Tensor::from_matrix(&z[0].value))?;
        for col in 0..k {
            if alive[col] && per_target[col].is_finite() && per_target[col] < best[col] {
                best[col] = per_target[col];
            }
        }
    }

    let ok: Vec<f64> = best.iter().copied().filter(|v| v.is_finite()).collect();
    Ok(IvoResult {
        mean_mse: if ok.is_empty() {
            f64::NAN
        } else {
            ok.iter().sum::<f64>() / ok.len() as f64
        },
        failed: k - ok.len(),
    })
}

fn column_sq_errors(x: &Tensor, g: &impl LatentGenerator, z: &Tensor) -> Result<Vec<f64>> {
    let out = g.generate(&Tape::new(), z)?;
    let (d, k) = (x.shape().rows, x.shape().cols);
    Ok((0..k)
        .map(|c| {
            (0..d)
                .map(|r| (x.values()[r * k + c] - out.values()[r * k + c]).powi(2))
                .sum()
        })
        .collect())
}
