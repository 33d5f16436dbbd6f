//! Fully connected networks for the generator, discriminator and VAE, with
//! the last hidden layer exposed as the feature tap for the diversity loss.

mod adam;
mod checkpoint;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Checkpoint, NetRecord, ParamRecord};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tape, Tensor};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply(self, tape: &Tape, x: &Tensor) -> Result<Tensor> {
        match self {
            Activation::Identity => Ok(x.clone()),
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Sigmoid => tape.sigmoid(x),
        }
    }
}

/// Layer widths from input to output plus activations and init seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
    pub seed: u64,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, seed: u64) -> Self {
        Self {
            widths,
            hidden: Activation::Relu,
            output: Activation::Identity,
            seed,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("validated widths")
    }

    /// Width of the feature tap (the last hidden layer).
    pub fn feature_dim(&self) -> usize {
        self.widths[self.widths.len() - 2]
    }
}

/// A named parameter block.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
}

/// Multilayer perceptron acting on column batches: input is `in×B`.
///
/// Parameters are stored as `w0, b0, w1, b1, ...` with `wᵢ` of shape
/// `out×in` and `bᵢ` of shape `out×1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    params: Vec<Param>,
}

impl Mlp {
    /// Builds the network with seeded He-uniform weights and zero biases.
    pub fn new(spec: MlpSpec) -> Result<Self> {
        if spec.widths.len() < 3 {
            return Err(Error::Config(format!(
                "an MLP needs at least one hidden layer, got widths {:?}",
                spec.widths
            )));
        }
        if spec.widths.contains(&0) {
            return Err(Error::Config(format!("zero layer width in {:?}", spec.widths)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut params = Vec::with_capacity(2 * (spec.widths.len() - 1));
        for (i, pair) in spec.widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let w = Matrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-bound..bound));
            params.push(Param {
                name: format!("w{i}"),
                value: w,
            });
            params.push(Param {
                name: format!("b{i}"),
                value: Matrix::zeros(fan_out, 1),
            });
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.as_slice().len()).sum()
    }

    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        self.params.iter().map(|p| (p.value.rows(), p.value.cols())).collect()
    }

    /// Zeros the output layer so the network emits all zeros.
    pub fn zero_output_layer(&mut self) {
        let n = self.params.len();
        for p in &mut self.params[n - 2..] {
            p.value.as_mut_slice().fill(0.0);
        }
    }

    /// Replaces all parameters; shapes and names must match.
    pub fn load_params(&mut self, params: Vec<Param>) -> Result<()> {
        if params.len() != self.params.len()
            || params
                .iter()
                .zip(&self.params)
                .any(|(a, b)| a.name != b.name || a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols())
        {
            return Err(Error::Config("parameter blocks do not match the network layout".into()));
        }
        self.params = params;
        Ok(())
    }

    /// Order-sensitive hash of every parameter bit, for change detection.
    pub fn checksum(&self) -> u64 {
        // FNV-1a over the raw bits
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for p in &self.params {
            for v in p.value.as_slice() {
                for byte in v.to_bits().to_le_bytes() {
                    h ^= byte as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }

    /// Registers every parameter as a trainable leaf on `tape`.
    pub fn bind(&self, tape: &Tape) -> BoundMlp {
        self.bound(|m| tape.leaf(Tensor::from_matrix(m)))
    }

    /// Parameters as constants: gradients flow through the network to its
    /// input but not into its weights.
    pub fn frozen(&self) -> BoundMlp {
        self.bound(Tensor::from_matrix)
    }

    fn bound(&self, mut f: impl FnMut(&Matrix) -> Tensor) -> BoundMlp {
        BoundMlp {
            hidden: self.spec.hidden,
            output: self.spec.output,
            params: self.params.iter().map(|p| f(&p.value)).collect(),
        }
    }

    /// Plain forward pass with no gradient bookkeeping.
    pub fn eval(&self, x: &Matrix) -> Result<MlpOutput> {
        let x = Tensor::from_matrix(x);
        self.frozen().forward(&Tape::new(), &x)
    }
}

/// An [`Mlp`]'s parameters bound to a tape (or frozen as constants).
pub struct BoundMlp {
    hidden: Activation,
    output: Activation,
    params: Vec<Tensor>,
}

/// Network output together with the feature tap.
#[derive(Clone, Debug)]
pub struct MlpOutput {
    pub output: Tensor,
    /// Activations of the last hidden layer, `feature_dim × B`.
    pub features: Tensor,
}

impl BoundMlp {
    pub fn forward(&self, tape: &Tape, x: &Tensor) -> Result<MlpOutput> {
        let layers = self.params.len() / 2;
        let ones = Tensor::filled(1, x.shape().cols, 1.0);
        let mut h = x.clone();
        let mut features = None;
        for l in 0..layers {
            let w = &self.params[2 * l];
            let b = &self.params[2 * l + 1];
            let pre = tape.add(&tape.matmul(w, &h)?, &tape.matmul(b, &ones)?)?;
            if l + 1 == layers {
                h = self.output.apply(tape, &pre)?;
            } else {
                h = self.hidden.apply(tape, &pre)?;
                features = Some(h.clone());
            }
        }
        Ok(MlpOutput {
            output: h,
            features: features.expect("at least one hidden layer"),
        })
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    /// Gradients for each parameter block, zeros where the loss did not
    /// reach.
    pub fn grads(&self, g: &Gradients) -> Vec<Vec<f64>> {
        self.params.iter().map(|p| g.wrt_or_zeros(p)).collect()
    }
}

/// Draws a `rows×cols` standard normal matrix.
pub fn gaussian(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Layer sizes shared by the synthetic-benchmark networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    /// Hidden widths; the last one is the feature tap.
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
}

impl ArchConfig {
    pub fn gan_default() -> Self {
        Self {
            hidden: vec![128, 128],
            latent_dim: 64,
        }
    }

    pub fn vae_default(data_dim: usize) -> Self {
        Self {
            hidden: vec![128, 128],
            latent_dim: if data_dim <= 2 { 8 } else { 32 },
        }
    }

    fn widths(&self, input: usize, output: usize) -> Vec<usize> {
        let mut w = vec![input];
        w.extend(&self.hidden);
        w.push(output);
        w
    }
}

/// Generator `z ↦ x` and discriminator `x ↦ logit`.
#[derive(Clone, Debug, PartialEq)]
pub struct GanPair {
    pub generator: Mlp,
    pub discriminator: Mlp,
}

impl GanPair {
    pub fn new(data_dim: usize, arch: &ArchConfig, seed: u64) -> Result<Self> {
        let generator = Mlp::new(MlpSpec::new(arch.widths(arch.latent_dim, data_dim), seed))?;
        let discriminator = Mlp::new(MlpSpec::new(
            arch.widths(data_dim, 1),
            seed.wrapping_add(0x9e37_79b9_7f4a_7c15),
        ))?;
        Ok(Self {
            generator,
            discriminator,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.generator.spec().input_dim()
    }

    pub fn data_dim(&self) -> usize {
        self.generator.spec().output_dim()
    }

    /// Samples `n` points from the generator as an `n×d` matrix (rows are
    /// samples).
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Result<Matrix> {
        let z = gaussian(rng, self.latent_dim(), n);
        Ok(self.generator.eval(&z)?.output.to_matrix().transpose())
    }
}

pub fn generator_forward(tape: &Tape, g: &BoundMlp, z: &Tensor) -> Result<Tensor> {
    Ok(g.forward(tape, z)?.output)
}

/// Logits (`1×B`) and pre-normalization features for a column batch.
pub fn discriminator_forward(tape: &Tape, d: &BoundMlp, x: &Tensor) -> Result<(Tensor, Tensor)> {
    let out = d.forward(tape, x)?;
    Ok((out.output, out.features))
}

/// Encoder `x ↦ (μ, log σ²)` and decoder `z ↦ x̂`.
#[derive(Clone, Debug, PartialEq)]
pub struct VaeNets {
    pub encoder: Mlp,
    pub decoder: Mlp,
}

/// Everything produced by one VAE pass over a batch.
pub struct VaeOutput {
    pub reconstruction: Tensor,
    pub mu: Tensor,
    pub log_var: Tensor,
    /// Encoder's final hidden activations on the input batch.
    pub features: Tensor,
    pub z: Tensor,
}

impl VaeNets {
    pub fn new(data_dim: usize, arch: &ArchConfig, seed: u64) -> Result<Self> {
        let encoder = Mlp::new(MlpSpec::new(arch.widths(data_dim, 2 * arch.latent_dim), seed))?;
        let decoder = Mlp::new(MlpSpec::new(
            arch.widths(arch.latent_dim, data_dim),
            seed.wrapping_add(0x9e37_79b9_7f4a_7c15),
        ))?;
        Ok(Self { encoder, decoder })
    }

    pub fn latent_dim(&self) -> usize {
        self.decoder.spec().input_dim()
    }

    pub fn data_dim(&self) -> usize {
        self.decoder.spec().output_dim()
    }

    /// Decodes `n` prior draws `z ~ N(0, I)` into an `n×d` sample matrix.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Result<Matrix> {
        let z = gaussian(rng, self.latent_dim(), n);
        Ok(self.decoder.eval(&z)?.output.to_matrix().transpose())
    }
}

/// Encodes `x`, draws `z = μ + σ ⊙ ε` with `ε ~ N(0, I)` from `rng`, and
/// decodes.
pub fn vae_forward(
    tape: &Tape,
    encoder: &BoundMlp,
    decoder: &BoundMlp,
    x: &Tensor,
    rng: &mut impl Rng,
) -> Result<VaeOutput> {
    let enc = encoder.forward(tape, x)?;
    let latent = enc.output.shape().rows / 2;
    let mu = tape.slice_rows(&enc.output, 0..latent)?;
    let log_var = tape.slice_rows(&enc.output, latent..2 * latent)?;
    let z = reparameterize(tape, &mu, &log_var, rng)?;
    let reconstruction = decoder.forward(tape, &z)?.output;
    Ok(VaeOutput {
        reconstruction,
        mu,
        log_var,
        features: enc.features,
        z,
    })
}

/// `μ + exp(log σ² / 2) ⊙ ε`.
pub fn reparameterize(tape: &Tape, mu: &Tensor, log_var: &Tensor, rng: &mut impl Rng) -> Result<Tensor> {
    let shape = mu.shape();
    let eps = Tensor::from_matrix(&gaussian(rng, shape.rows, shape.cols));
    let sigma = tape.exp(&tape.mul_scalar(log_var, 0.5)?)?;
    tape.add(mu, &tape.mul(&sigma, &eps)?)
}

/// `KL(N(μ, σ²) ‖ N(0, I))` summed over latent dimensions and averaged over
/// the batch.
pub fn gaussian_kl(tape: &Tape, mu: &Tensor, log_var: &Tensor) -> Result<Tensor> {
    let batch = mu.shape().cols as f64;
    let mu2 = tape.mul(mu, mu)?;
    let var = tape.exp(log_var)?;
    let terms = tape.sub(&tape.add(&mu2, &var)?, &tape.add_scalar(log_var, 1.0)?)?;
    tape.mul_scalar(&tape.sum(&terms)?, 0.5 / batch)
}
