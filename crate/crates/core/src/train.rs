//! GAN and VAE training on the mixture benchmarks, with the diversity loss
//! as an optional extra generator term.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::data::{sample, Benchmark, MixtureSpec};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::loss::{extract_features, gdpp_with, GdppConfig, GdppVariant, MagnitudeForm, Origin};
use crate::metrics::{coverage_metrics, ivo, mode_kl, IvoConfig, MetricsRecord};
use crate::models::Checkpoint;
use crate::models::{
    discriminator_forward, gaussian, gaussian_kl, generator_forward, vae_forward, Adam, AdamConfig, ArchConfig,
    GanPair, VaeNets,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Gan,
    Vae,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Gan => "gan",
            ModelKind::Vae => "vae",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gan" => Ok(ModelKind::Gan),
            "vae" => Ok(ModelKind::Vae),
            _ => Err(Error::Config(format!("unknown model `{s}` (valid: gan, vae)"))),
        }
    }
}

/// Generator objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenLoss {
    /// Minimize `log(1 - D(G(z)))`.
    Saturating,
    /// Minimize `-log D(G(z))`.
    #[default]
    NonSaturating,
}

impl FromStr for GenLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "saturating" => Ok(GenLoss::Saturating),
            "nonsaturating" | "non_saturating" => Ok(GenLoss::NonSaturating),
            _ => Err(Error::Config(format!(
                "unknown generator loss `{s}` (valid: saturating, nonsaturating)"
            ))),
        }
    }
}

/// Where the VAE's generated batch for the diversity loss comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VaeFakeSource {
    /// Decode `z ~ N(μ, σ)` from the encoder posterior of the real batch.
    #[default]
    Posterior,
    /// Decode `z ~ N(0, I)`.
    Prior,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub benchmark: Benchmark,
    pub model: ModelKind,
    /// `None` trains the plain model.
    pub gdpp: Option<GdppVariant>,
    pub magnitude: MagnitudeForm,
    pub abs_cosine: bool,
    pub iterations: usize,
    pub batch: usize,
    pub seed: u64,
    /// Seed of the benchmark itself (only the high-dim mixture uses it).
    pub data_seed: u64,
    pub eval_every: usize,
    pub eval_samples: usize,
    pub gen_loss: GenLoss,
    pub hidden: Vec<usize>,
    /// Defaults to 64 for GANs and 8 (2-D data) or 32 for VAEs.
    pub latent_dim: Option<usize>,
    pub gan_adam: AdamConfig,
    pub vae_adam: AdamConfig,
    /// Multiplies the squared reconstruction error in the VAE objective.
    pub recon_weight: f64,
    pub vae_fake: VaeFakeSource,
    /// Number of true samples used for inference-via-optimization at the
    /// final checkpoint; 0 disables it.
    pub ivo_targets: usize,
    pub ivo: IvoConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            benchmark: Benchmark::Ring,
            model: ModelKind::Gan,
            gdpp: None,
            magnitude: MagnitudeForm::Absolute,
            abs_cosine: false,
            iterations: 25_000,
            batch: 128,
            seed: 0,
            data_seed: 0,
            eval_every: 500,
            eval_samples: crate::metrics::EVAL_SAMPLES,
            gen_loss: GenLoss::NonSaturating,
            hidden: vec![128, 128],
            latent_dim: None,
            gan_adam: AdamConfig::GAN,
            vae_adam: AdamConfig::VAE,
            recon_weight: 1.0,
            vae_fake: VaeFakeSource::Posterior,
            ivo_targets: 64,
            ivo: IvoConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.batch < 2 {
            return bad("batch must be at least 2");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be positive");
        }
        if self.eval_samples == 0 {
            return bad("eval_samples must be positive");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden widths must be a non-empty list of positive sizes");
        }
        if self.latent_dim == Some(0) {
            return bad("latent_dim must be positive");
        }
        Ok(())
    }

    pub fn gdpp_config(&self) -> Option<GdppConfig> {
        self.gdpp.map(|variant| GdppConfig {
            variant,
            magnitude: self.magnitude,
            abs_cosine: self.abs_cosine,
        })
    }

    /// Sets one field from its `key = value` text form. `gdpp` accepts `off`
    /// or a variant flag, `hidden` a comma-separated list, `latent_dim` a
    /// size or `auto`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("`{key}` expects a number, got `{value}`")))
        }
        fn flag(key: &str, value: &str) -> Result<bool> {
            match value {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                _ => Err(Error::Config(format!("`{key}` expects true or false, got `{value}`"))),
            }
        }
        match key {
            "benchmark" => self.benchmark = value.parse()?,
            "model" => self.model = value.parse()?,
            "gdpp" => self.gdpp = if value == "off" { None } else { Some(value.parse()?) },
            "magnitude" => self.magnitude = value.parse()?,
            "abs_cosine" => self.abs_cosine = flag(key, value)?,
            "iterations" => self.iterations = num(key, value)?,
            "batch" => self.batch = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "data_seed" => self.data_seed = num(key, value)?,
            "eval_every" => self.eval_every = num(key, value)?,
            "eval_samples" => self.eval_samples = num(key, value)?,
            "gen_loss" => self.gen_loss = value.parse()?,
            "hidden" => {
                self.hidden = value
                    .split(',')
                    .map(|w| num(key, w.trim()))
                    .collect::<Result<Vec<usize>>>()?
            }
            "latent_dim" => self.latent_dim = if value == "auto" { None } else { Some(num(key, value)?) },
            "gan_lr" => self.gan_adam.lr = num(key, value)?,
            "gan_beta1" => self.gan_adam.beta1 = num(key, value)?,
            "gan_beta2" => self.gan_adam.beta2 = num(key, value)?,
            "vae_lr" => self.vae_adam.lr = num(key, value)?,
            "vae_beta1" => self.vae_adam.beta1 = num(key, value)?,
            "vae_beta2" => self.vae_adam.beta2 = num(key, value)?,
            "recon_weight" => self.recon_weight = num(key, value)?,
            "vae_fake" => {
                self.vae_fake = match value {
                    "posterior" => VaeFakeSource::Posterior,
                    "prior" => VaeFakeSource::Prior,
                    _ => {
                        return Err(Error::Config(format!(
                            "`vae_fake` expects posterior or prior, got `{value}`"
                        )))
                    }
                }
            }
            "ivo_targets" => self.ivo_targets = num(key, value)?,
            "ivo_steps" => self.ivo.steps = num(key, value)?,
            "ivo_lr" => self.ivo.lr = num(key, value)?,
            "ivo_restarts" => self.ivo.restarts = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown setting `{key}`"))),
        }
        Ok(())
    }

    pub fn arch(&self, data_dim: usize) -> ArchConfig {
        let default_latent = match self.model {
            ModelKind::Gan => ArchConfig::gan_default().latent_dim,
            ModelKind::Vae => ArchConfig::vae_default(data_dim).latent_dim,
        };
        ArchConfig {
            hidden: self.hidden.clone(),
            latent_dim: self.latent_dim.unwrap_or(default_latent),
        }
    }

    /// Checkpoint iterations: `0, eval_every, 2·eval_every, …` up to
    /// `iterations`.
    pub fn checkpoints(&self) -> impl Iterator<Item = usize> + '_ {
        (0..=self.iterations / self.eval_every).map(|k| k * self.eval_every)
    }

    /// Short label such as `gdpp-gan/ring` or `gan/grid`.
    pub fn label(&self) -> String {
        let method = match &self.gdpp {
            None => self.model.name().to_string(),
            Some(GdppVariant::Full) => format!("gdpp-{}", self.model),
            Some(v) => format!("gdpp[{v}]-{}", self.model),
        };
        format!("{method}/{}", self.benchmark)
    }
}

/// Trained parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum TrainedModel {
    Gan(GanPair),
    Vae(VaeNets),
}

impl TrainedModel {
    /// Draws `n` samples from the model (rows are samples).
    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<Matrix> {
        match self {
            TrainedModel::Gan(g) => g.sample(n, rng),
            TrainedModel::Vae(v) => v.sample(n, rng),
        }
    }

    pub fn generator(&self) -> &crate::models::Mlp {
        match self {
            TrainedModel::Gan(g) => &g.generator,
            TrainedModel::Vae(v) => &v.decoder,
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Gan(_) => ModelKind::Gan,
            TrainedModel::Vae(_) => ModelKind::Vae,
        }
    }

    pub fn to_checkpoint(&self, manifest: Option<String>, iteration: Option<usize>) -> Checkpoint {
        let mut ck = match self {
            TrainedModel::Gan(g) => Checkpoint::from_gan(g, manifest),
            TrainedModel::Vae(v) => Checkpoint::from_vae(v, manifest),
        };
        ck.iteration = iteration;
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        match ck.kind.parse()? {
            ModelKind::Gan => Ok(TrainedModel::Gan(ck.to_gan()?)),
            ModelKind::Vae => Ok(TrainedModel::Vae(ck.to_vae()?)),
        }
    }

    /// Shapes of every trainable parameter block, network by network.
    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        match self {
            TrainedModel::Gan(g) => [g.generator.param_shapes(), g.discriminator.param_shapes()].concat(),
            TrainedModel::Vae(v) => [v.encoder.param_shapes(), v.decoder.param_shapes()].concat(),
        }
    }
}

/// Loss values of the last training step before a checkpoint.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    /// Discriminator loss (GAN) or reconstruction term (VAE).
    pub primary: f64,
    /// Adversarial generator term (GAN) or KL term (VAE).
    pub secondary: f64,
    pub diversity: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub config: TrainConfig,
    pub model: TrainedModel,
    pub records: Vec<MetricsRecord>,
    /// Losses of the step preceding each checkpoint (zeros at iteration 0).
    pub losses: Vec<StepLosses>,
    /// Mean training wall time per iteration, excluding evaluation.
    pub avg_iteration_seconds: f64,
}

impl RunResult {
    pub fn last(&self) -> &MetricsRecord {
        self.records.last().expect("at least the initial checkpoint")
    }
}

fn data_tensor(spec: &MixtureSpec, n: usize, rng: &mut ChaCha8Rng) -> Tensor {
    // columns are samples
    Tensor::from_matrix(&sample(spec, n, rng).0.transpose())
}

fn eval_rng(seed: u64, iteration: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_e7a1 ^ ((iteration as u64) << 20))
}

/// Metrics of `model` against `config`'s benchmark, as recorded at a
/// checkpoint. Sampling is seeded from `(config.seed, iteration)`, so
/// repeated calls agree bit for bit.
pub fn evaluate(
    config: &TrainConfig,
    spec: &MixtureSpec,
    model: &TrainedModel,
    iteration: usize,
    wall_seconds: f64,
    with_ivo: bool,
) -> Result<MetricsRecord> {
    let mut rng = eval_rng(config.seed, iteration);
    let samples = model.sample(config.eval_samples, &mut rng)?;
    let cov = coverage_metrics(&samples, spec);
    let ivo_mse = if with_ivo && config.ivo_targets > 0 {
        let (targets, _) = sample(spec, config.ivo_targets, &mut rng);
        Some(ivo(&targets, model.generator(), &config.ivo, &mut rng)?.mean_mse)
    } else {
        None
    };
    Ok(MetricsRecord {
        iteration,
        modes_captured: cov.modes_captured,
        hq_fraction: cov.hq_fraction,
        mode_kl: mode_kl(&samples, spec),
        ivo_mse,
        wall_seconds,
    })
}

/// `n` true samples and `n` model samples (rows), drawn from a stream
/// reserved for plotting.
pub fn draw_samples(config: &TrainConfig, model: &TrainedModel, n: usize) -> Result<(Matrix, Matrix)> {
    let spec = config.benchmark.spec(config.data_seed);
    let mut rng = eval_rng(config.seed, usize::MAX);
    let real = sample(&spec, n, &mut rng).0;
    Ok((real, model.sample(n, &mut rng)?))
}

fn check_finite(iteration: usize, parts: &[(&str, f64)]) -> Result<()> {
    if parts.iter().all(|(_, v)| v.is_finite()) {
        return Ok(());
    }
    let detail = parts
        .iter()
        .map(|(n, v)| format!("{n}={v}"))
        .collect::<Vec<_>>()
        .join(", ");
    Err(Error::Diverged { iteration, detail })
}

/// Adversarial training with an optional diversity term on the generator.
///
/// Each iteration takes one discriminator step on
/// `-[log D(x) + log(1 - D(G(z)))]` and then one generator step; the
/// discriminator is frozen during the generator step. Real features for the
/// diversity loss come from the current discriminator on a fresh real batch.
pub fn train_gan(config: &TrainConfig) -> Result<RunResult> {
    train_gan_observed(config, |_, _| {})
}

/// [`train_gan`] with a hook called after every iteration with the
/// iteration number and the model.
pub fn train_gan_observed(config: &TrainConfig, mut observe: impl FnMut(usize, &GanPair)) -> Result<RunResult> {
    config.validate()?;
    let spec = config.benchmark.spec(config.data_seed);
    let arch = config.arch(spec.ambient_dim);
    let mut gan = GanPair::new(spec.ambient_dim, &arch, config.seed)?;
    let mut opt_g = Adam::new(config.gan_adam, gan.generator.params());
    let mut opt_d = Adam::new(config.gan_adam, gan.discriminator.params());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let batch = config.batch;
    let latent = gan.latent_dim();

    let mut records = Vec::new();
    let mut losses = Vec::new();
    let mut last = StepLosses::default();
    let mut train_seconds = 0.0;
    let last_checkpoint = config.checkpoints().last().unwrap_or(0);

    for it in 0..=config.iterations {
        if it % config.eval_every == 0 {
            let model = TrainedModel::Gan(gan.clone());
            records.push(evaluate(
                config,
                &spec,
                &model,
                it,
                train_seconds,
                it == last_checkpoint,
            )?);
            losses.push(last);
        }
        if it == config.iterations {
            break;
        }
        let started = Instant::now();

        // discriminator step
        let real = data_tensor(&spec, batch, &mut rng);
        let z = Tensor::from_matrix(&gaussian(&mut rng, latent, batch));
        let fake = generator_forward(&Tape::new(), &gan.generator.frozen(), &z)?;
        let tape = Tape::new();
        let d = gan.discriminator.bind(&tape);
        let (real_logits, _) = discriminator_forward(&tape, &d, &real)?;
        let (fake_logits, _) = discriminator_forward(&tape, &d, &fake)?;
        let real_term = tape.mean(&tape.softplus(&tape.neg(&real_logits)?)?)?;
        let fake_term = tape.mean(&tape.softplus(&fake_logits)?)?;
        let d_loss = tape.add(&real_term, &fake_term)?;
        check_finite(it, &[("d_loss", d_loss.item())])?;
        let grads = d.grads(&tape.backward(&d_loss)?);
        opt_d.step(gan.discriminator.params_mut(), &grads)?;

        // generator step
        let real = data_tensor(&spec, batch, &mut rng);
        let z = Tensor::from_matrix(&gaussian(&mut rng, latent, batch));
        let tape = Tape::new();
        let g = gan.generator.bind(&tape);
        let d = gan.discriminator.frozen();
        let fake = generator_forward(&tape, &g, &z)?;
        let (fake_logits, fake_features) = discriminator_forward(&tape, &d, &fake)?;
        let adversarial = match config.gen_loss {
            GenLoss::NonSaturating => tape.mean(&tape.softplus(&tape.neg(&fake_logits)?)?)?,
            GenLoss::Saturating => tape.neg(&tape.mean(&tape.softplus(&fake_logits)?)?)?,
        };
        let mut g_loss = adversarial.clone();
        let mut diversity = None;
        if let Some(gdpp_config) = &config.gdpp_config() {
            let (_, real_features) = discriminator_forward(&tape, &d, &real)?;
            let real_batch = extract_features(&tape, &real_features, Origin::Real)?;
            let fake_batch = extract_features(&tape, &fake_features, Origin::Fake)?;
            let term = gdpp_with(&tape, &real_batch, &fake_batch, gdpp_config)?.total;
            diversity = Some(term.item());
            g_loss = tape.add(&g_loss, &term)?;
        }
        check_finite(
            it,
            &[
                ("d_loss", d_loss.item()),
                ("g_adv", adversarial.item()),
                ("gdpp", diversity.unwrap_or(0.0)),
            ],
        )?;
        let grads = g.grads(&tape.backward(&g_loss)?);
        opt_g.step(gan.generator.params_mut(), &grads)?;

        train_seconds += started.elapsed().as_secs_f64();
        last = StepLosses {
            primary: d_loss.item(),
            secondary: adversarial.item(),
            diversity,
        };
        observe(it + 1, &gan);
    }

    Ok(RunResult {
        config: config.clone(),
        model: TrainedModel::Gan(gan),
        records,
        losses,
        avg_iteration_seconds: if config.iterations == 0 {
            0.0
        } else {
            train_seconds / config.iterations as f64
        },
    })
}

/// VAE training: weighted squared reconstruction error plus
/// `KL(q(z|x) ‖ N(0, I))`, plus the diversity loss between encoder features
/// of the real batch and of a decoded batch when enabled.
pub fn train_vae(config: &TrainConfig) -> Result<RunResult> {
    config.validate()?;
    let spec = config.benchmark.spec(config.data_seed);
    let arch = config.arch(spec.ambient_dim);
    let mut vae = VaeNets::new(spec.ambient_dim, &arch, config.seed)?;
    let mut opt_e = Adam::new(config.vae_adam, vae.encoder.params());
    let mut opt_d = Adam::new(config.vae_adam, vae.decoder.params());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let batch = config.batch;

    let mut records = Vec::new();
    let mut losses = Vec::new();
    let mut last = StepLosses::default();
    let mut train_seconds = 0.0;
    let last_checkpoint = config.checkpoints().last().unwrap_or(0);

    for it in 0..=config.iterations {
        if it % config.eval_every == 0 {
            let model = TrainedModel::Vae(vae.clone());
            records.push(evaluate(
                config,
                &spec,
                &model,
                it,
                train_seconds,
                it == last_checkpoint,
            )?);
            losses.push(last);
        }
        if it == config.iterations {
            break;
        }
        let started = Instant::now();

        let x = data_tensor(&spec, batch, &mut rng);
        let tape = Tape::new();
        let enc = vae.encoder.bind(&tape);
        let dec = vae.decoder.bind(&tape);
        let out = vae_forward(&tape, &enc, &dec, &x, &mut rng)?;
        let diff = tape.sub(&x, &out.reconstruction)?;
        let recon = tape.mul_scalar(&tape.sum(&tape.mul(&diff, &diff)?)?, config.recon_weight / batch as f64)?;
        let kl = gaussian_kl(&tape, &out.mu, &out.log_var)?;
        let mut loss = tape.add(&recon, &kl)?;
        let mut diversity = None;
        if let Some(gdpp_config) = &config.gdpp_config() {
            let fake = match config.vae_fake {
                VaeFakeSource::Posterior => out.reconstruction.clone(),
                VaeFakeSource::Prior => {
                    let z = Tensor::from_matrix(&gaussian(&mut rng, vae.latent_dim(), batch));
                    dec.forward(&tape, &z)?.output
                }
            };
            let fake_features = enc.forward(&tape, &fake)?.features;
            let real_batch = extract_features(&tape, &out.features, Origin::Real)?;
            let fake_batch = extract_features(&tape, &fake_features, Origin::Fake)?;
            let term = gdpp_with(&tape, &real_batch, &fake_batch, gdpp_config)?.total;
            diversity = Some(term.item());
            loss = tape.add(&loss, &term)?;
        }
        check_finite(
            it,
            &[
                ("recon", recon.item()),
                ("kl", kl.item()),
                ("gdpp", diversity.unwrap_or(0.0)),
            ],
        )?;
        let g = tape.backward(&loss)?;
        opt_e.step(vae.encoder.params_mut(), &enc.grads(&g))?;
        opt_d.step(vae.decoder.params_mut(), &dec.grads(&g))?;

        train_seconds += started.elapsed().as_secs_f64();
        last = StepLosses {
            primary: recon.item(),
            secondary: kl.item(),
            diversity,
        };
    }

    Ok(RunResult {
        config: config.clone(),
        model: TrainedModel::Vae(vae),
        records,
        losses,
        avg_iteration_seconds: if config.iterations == 0 {
            0.0
        } else {
            train_seconds / config.iterations as f64
        },
    })
}

/// Dispatches on `config.model`.
pub fn train(config: &TrainConfig) -> Result<RunResult> {
    match config.model {
        ModelKind::Gan => train_gan(config),
        ModelKind::Vae => train_vae(config),
    }
}

/// Batch sizes of the data-efficiency sweep.
pub const SWEEP_BATCH_SIZES: [usize; 4] = [64, 128, 256, 512];

/// Same iteration budget at each batch size.
pub fn sweep_batch_size(config: &TrainConfig, sizes: &[usize], workers: usize) -> Vec<(usize, Result<RunResult>)> {
    let configs: Vec<TrainConfig> = sizes
        .iter()
        .map(|&b| TrainConfig {
            batch: b,
            ..config.clone()
        })
        .collect();
    sizes.iter().copied().zip(run_many(&configs, workers)).collect()
}

/// A single run at a fixed batch size (512 by default); its checkpoints form
/// the metric-versus-iteration series.
pub fn sweep_iterations(config: &TrainConfig, batch: usize) -> Result<RunResult> {
    train(&TrainConfig {
        batch,
        ..config.clone()
    })
}

/// Runs independent configurations on up to `workers` threads and returns
/// the results in input order.
pub fn run_many(configs: &[TrainConfig], workers: usize) -> Vec<Result<RunResult>> {
    let mut out: Vec<Option<Result<RunResult>>> = (0..configs.len()).map(|_| None).collect();
    run_many_with(configs, workers, |i, r| out[i] = Some(r));
    out.into_iter()
        .map(|r| r.expect("every config produced a result"))
        .collect()
}

/// Runs independent configurations on up to `workers` threads. Each result
/// is handed to `collect` on the calling thread as soon as it is ready,
/// together with its index in `configs`.
pub fn run_many_with(configs: &[TrainConfig], workers: usize, mut collect: impl FnMut(usize, Result<RunResult>)) {
    let workers = workers.clamp(1, configs.len().max(1));
    if workers == 1 {
        for (i, c) in configs.iter().enumerate() {
            collect(i, train(c));
        }
        return;
    }
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= configs.len() {
                    break;
                }
                if tx.send((i, train(&configs[i]))).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (i, r) in rx {
            collect(i, r);
        }
    })
}
