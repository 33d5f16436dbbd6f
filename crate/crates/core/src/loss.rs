//! DPP kernels over feature batches and the eigen-matching diversity loss.
//!
//! For a batch of `B` samples with `D`-dimensional features `φ` (unit-norm
//! columns), the DPP kernel is the Gram matrix `L = φᵀφ` (all quality terms
//! are 1). The loss compares the kernel of a real batch with the kernel of a
//! generated batch through their eigendecompositions:
//!
//! - magnitude: `L_m = Σᵢ |λᵢ_real - λᵢ_fake|`, pairing eigenvalues by rank;
//! - structure: `L_s = -Σᵢ λ̂ᵢ_real · cos(vᵢ_real, vᵢ_fake)`, with `λ̂` the
//!   min-max normalized real spectrum.
//!
//! The real side is always a constant. Only the generated features carry
//! gradients.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::linalg::{minmax_normalize, sym_eig, Matrix, SymmetricMatrix};

/// Added to the determinant before the log in [`GdppVariant::ExactDeterminant`].
pub const DET_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Real,
    Fake,
}

/// `D×B` features with unit-norm columns, one column per sample.
///
/// Real batches are always detached from the tape.
#[derive(Clone, Debug)]
pub struct FeatureBatch {
    features: Tensor,
    origin: Origin,
}

impl FeatureBatch {
    pub fn dims(&self) -> usize {
        self.features.shape().rows
    }

    pub fn batch(&self) -> usize {
        self.features.shape().cols
    }

    pub fn origin(&self) -> Origin {
        self.origin
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    /// Normalizes a plain matrix of activations into a batch.
    pub fn from_matrix(m: &Matrix, origin: Origin) -> Result<Self> {
        let t = Tensor::constant(m.rows(), m.cols(), m.as_slice().to_vec())?;
        extract_features(&Tape::new(), &t, origin)
    }
}

/// Turns `D×B` pre-output activations into a feature batch by ℓ2-normalizing
/// each column. Real-tagged output is detached.
pub fn extract_features(tape: &Tape, activations: &Tensor, origin: Origin) -> Result<FeatureBatch> {
    if activations.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("feature activations"));
    }
    let features = match origin {
        Origin::Real => Tape::new().normalize_columns(&activations.detach())?,
        Origin::Fake => tape.normalize_columns(activations)?,
    };
    Ok(FeatureBatch { features, origin })
}

/// The `B×B` kernel `φᵀφ` as a plain symmetric matrix.
pub fn build_kernel(f: &FeatureBatch) -> Result<SymmetricMatrix> {
    let phi = f.features.to_matrix();
    let k = phi.transpose().matmul(&phi)?;
    SymmetricMatrix::from_matrix(&k)
}

/// Which terms of the loss to evaluate (the ablation settings).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GdppVariant {
    /// `L_m + L_s`.
    #[default]
    Full,
    /// `L_m` only.
    MagnitudeOnly,
    /// `L_s` only.
    StructureOnly,
    /// `L_m` plus the structure term weighted by raw, unnormalized real
    /// eigenvalues.
    UnnormalizedStructure,
    /// `-log(det(L_fake) + ε)`: pushes generated samples apart, ignoring the
    /// real batch.
    ExactDeterminant,
}

impl GdppVariant {
    pub const ALL: [GdppVariant; 5] = [
        GdppVariant::ExactDeterminant,
        GdppVariant::MagnitudeOnly,
        GdppVariant::StructureOnly,
        GdppVariant::UnnormalizedStructure,
        GdppVariant::Full,
    ];

    /// Short name used on the command line.
    pub fn flag(self) -> &'static str {
        match self {
            GdppVariant::Full => "full",
            GdppVariant::MagnitudeOnly => "magnitude",
            GdppVariant::StructureOnly => "structure",
            GdppVariant::UnnormalizedStructure => "unnorm",
            GdppVariant::ExactDeterminant => "det",
        }
    }
}

impl fmt::Display for GdppVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.flag())
    }
}

impl FromStr for GdppVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GdppVariant::ALL.into_iter().find(|v| v.flag() == s).ok_or_else(|| {
            Error::Config(format!(
                "unknown loss variant `{s}` (valid: full, magnitude, structure, unnorm, det)"
            ))
        })
    }
}

/// How per-rank eigenvalue differences are penalized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MagnitudeForm {
    /// `Σ |Δλᵢ|`.
    #[default]
    Absolute,
    /// `Σ Δλᵢ²`.
    Squared,
}

impl FromStr for MagnitudeForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "absolute" => Ok(MagnitudeForm::Absolute),
            "squared" => Ok(MagnitudeForm::Squared),
            _ => Err(Error::Config(format!(
                "unknown magnitude form `{s}` (valid: absolute, squared)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GdppConfig {
    pub variant: GdppVariant,
    pub magnitude: MagnitudeForm,
    /// Use `|cos|` in the structure term, making it blind to eigenvector sign.
    pub abs_cosine: bool,
}

impl From<GdppVariant> for GdppConfig {
    fn from(variant: GdppVariant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }
}

/// Loss value on the tape plus the scalar terms that went into it.
#[derive(Clone, Debug)]
pub struct GdppLoss {
    pub total: Tensor,
    pub magnitude: Option<f64>,
    pub structure: Option<f64>,
}

/// The diversity loss between a real and a generated feature batch, using
/// default options for `variant`.
pub fn gdpp(tape: &Tape, real: &FeatureBatch, fake: &FeatureBatch, variant: GdppVariant) -> Result<Tensor> {
    Ok(gdpp_with(tape, real, fake, &variant.into())?.total)
}

pub fn gdpp_with(tape: &Tape, real: &FeatureBatch, fake: &FeatureBatch, config: &GdppConfig) -> Result<GdppLoss> {
    let n = fake.batch();
    if real.batch() != n {
        return Err(Error::BatchMismatch {
            real: real.batch(),
            fake: n,
        });
    }

    let phi = &fake.features;
    let phi_t = tape.transpose(phi)?;
    let kernel = tape.matmul(&phi_t, phi)?;
    let (fake_lambdas, fake_vectors) = tape.sym_eig(&kernel)?;
    if fake_lambdas.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("generated kernel spectrum"));
    }

    if config.variant == GdppVariant::ExactDeterminant {
        let mut det = tape.slice_rows(&fake_lambdas, 0..1)?;
        for i in 1..n {
            det = tape.mul(&det, &tape.slice_rows(&fake_lambdas, i..i + 1)?)?;
        }
        let total = tape.neg(&tape.log(&tape.add_scalar(&det, DET_EPS)?)?)?;
        return Ok(GdppLoss {
            total,
            magnitude: None,
            structure: None,
        });
    }

    let real_decomp = sym_eig(&build_kernel(real)?)?;
    let real_lambdas = real_decomp.lambdas();
    if real_lambdas.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("real kernel spectrum"));
    }

    let magnitude = match config.variant {
        GdppVariant::StructureOnly => None,
        _ => {
            let target = Tensor::constant(n, 1, real_lambdas.to_vec())?;
            let diff = tape.sub(&target, &fake_lambdas)?;
            let per_rank = match config.magnitude {
                MagnitudeForm::Absolute => tape.abs(&diff)?,
                MagnitudeForm::Squared => tape.mul(&diff, &diff)?,
            };
            Some(tape.sum(&per_rank)?)
        }
    };

    let structure = match config.variant {
        GdppVariant::MagnitudeOnly => None,
        _ => {
            let weights = match config.variant {
                GdppVariant::UnnormalizedStructure => real_lambdas.to_vec(),
                _ => minmax_normalize(real_lambdas),
            };
            // cosines of paired unit eigenvectors, as a 1×n row of column dots
            let real_vectors = Tensor::from_matrix(real_decomp.vectors());
            let products = tape.mul(&fake_vectors, &real_vectors)?;
            let mut cosines = tape.matmul(&Tensor::filled(1, n, 1.0), &products)?;
            if config.abs_cosine {
                cosines = tape.abs(&cosines)?;
            }
            let weighted = tape.dot(&cosines, &Tensor::constant(1, n, weights)?)?;
            Some(tape.neg(&weighted)?)
        }
    };

    let total = match (&magnitude, &structure) {
        (Some(m), Some(s)) => tape.add(m, s)?,
        (Some(m), None) => m.clone(),
        (None, Some(s)) => s.clone(),
        (None, None) => unreachable!("every variant has at least one term"),
    };
    Ok(GdppLoss {
        total,
        magnitude: magnitude.map(|t| t.item()),
        structure: structure.map(|t| t.item()),
    })
}
