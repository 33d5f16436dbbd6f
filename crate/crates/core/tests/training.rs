mod common;

use common::{rel_err, rng};
use gdpp::autodiff::{Tape, Tensor};
use gdpp::data::{make_ring, sample};
use gdpp::linalg::Matrix;
use gdpp::loss::{extract_features, gdpp, GdppVariant, Origin};
use gdpp::models::{
    discriminator_forward, gaussian, gaussian_kl, generator_forward, vae_forward, Adam, AdamConfig, ArchConfig,
    GanPair, VaeNets,
};
use gdpp::train::{sweep_batch_size, sweep_iterations, train, train_gan_observed, ModelKind, TrainConfig};

fn tiny() -> TrainConfig {
    TrainConfig {
        iterations: 6,
        batch: 8,
        eval_every: 3,
        eval_samples: 64,
        hidden: vec![8, 8],
        latent_dim: Some(3),
        ivo_targets: 0,
        ..TrainConfig::default()
    }
}

/// Non-saturating generator loss plus the full diversity term, for a fixed
/// latent batch and real batch.
fn generator_loss(gan: &GanPair, tape: &Tape, g: &gdpp::models::BoundMlp, z: &Tensor, real: &Tensor) -> Tensor {
    let d = gan.discriminator.frozen();
    let fake = generator_forward(tape, g, z).unwrap();
    let (logits, fake_f) = discriminator_forward(tape, &d, &fake).unwrap();
    let adv = tape.mean(&tape.softplus(&tape.neg(&logits).unwrap()).unwrap()).unwrap();
    let (_, real_f) = discriminator_forward(tape, &d, real).unwrap();
    let rb = extract_features(tape, &real_f, Origin::Real).unwrap();
    let fb = extract_features(tape, &fake_f, Origin::Fake).unwrap();
    tape.add(&adv, &gdpp(tape, &rb, &fb, GdppVariant::Full).unwrap())
        .unwrap()
}

#[test]
fn generator_gradient_through_the_diversity_loss_matches_finite_differences() {
    let arch = ArchConfig {
        hidden: vec![8, 8],
        latent_dim: 3,
    };
    let gan = GanPair::new(2, &arch, 5).unwrap();
    let z = Tensor::from_matrix(&gaussian(&mut rng(1), 3, 4));
    let real = Tensor::from_matrix(&sample(&make_ring(), 4, &mut rng(2)).0.transpose());

    let tape = Tape::new();
    let g = gan.generator.bind(&tape);
    let loss = generator_loss(&gan, &tape, &g, &z, &real);
    let analytic: Vec<f64> = g.grads(&tape.backward(&loss).unwrap()).concat();

    let h = 1e-6;
    let mut numeric = Vec::new();
    for block in 0..gan.generator.params().len() {
        for k in 0..gan.generator.params()[block].value.as_slice().len() {
            let eval = |delta: f64| {
                let mut p = gan.clone();
                p.generator.params_mut()[block].value.as_mut_slice()[k] += delta;
                let tape = Tape::new();
                generator_loss(&p, &tape, &p.generator.frozen(), &z, &real).item()
            };
            numeric.push((eval(h) - eval(-h)) / (2.0 * h));
        }
    }
    let err = rel_err(&analytic, &numeric);
    assert!(err <= 1e-4, "relative error {err:.2e}");
}

#[test]
fn generator_step_leaves_the_discriminator_untouched() {
    let arch = ArchConfig {
        hidden: vec![8, 8],
        latent_dim: 3,
    };
    let mut gan = GanPair::new(2, &arch, 9).unwrap();
    let before = gan.discriminator.checksum();
    let z = Tensor::from_matrix(&gaussian(&mut rng(3), 3, 8));
    let real = Tensor::from_matrix(&sample(&make_ring(), 8, &mut rng(4)).0.transpose());

    let tape = Tape::new();
    let g = gan.generator.bind(&tape);
    let grads = tape.backward(&generator_loss(&gan, &tape, &g, &z, &real)).unwrap();
    let mut opt = Adam::new(AdamConfig::GAN, gan.generator.params());
    let g_before = gan.generator.checksum();
    opt.step(gan.generator.params_mut(), &g.grads(&grads)).unwrap();

    assert_eq!(gan.discriminator.checksum(), before);
    assert_ne!(gan.generator.checksum(), g_before);
}

#[test]
fn training_alternates_both_networks() {
    let mut d_sums = Vec::new();
    let mut g_sums = Vec::new();
    train_gan_observed(
        &TrainConfig {
            gdpp: Some(GdppVariant::Full),
            ..tiny()
        },
        |_, gan| {
            d_sums.push(gan.discriminator.checksum());
            g_sums.push(gan.generator.checksum());
        },
    )
    .unwrap();
    assert_eq!(d_sums.len(), 6);
    assert!(d_sums.windows(2).all(|w| w[0] != w[1]));
    assert!(g_sums.windows(2).all(|w| w[0] != w[1]));
}

#[test]
fn the_diversity_loss_adds_no_parameters() {
    for model in [ModelKind::Gan, ModelKind::Vae] {
        let plain = train(&TrainConfig { model, ..tiny() }).unwrap();
        for v in GdppVariant::ALL {
            let with = train(&TrainConfig {
                model,
                gdpp: Some(v),
                ..tiny()
            })
            .unwrap();
            assert_eq!(plain.model.param_shapes(), with.model.param_shapes(), "{model} {v}");
        }
    }
}

#[test]
fn metric_series_are_reproducible() {
    for model in [ModelKind::Gan, ModelKind::Vae] {
        let c = TrainConfig {
            model,
            gdpp: Some(GdppVariant::Full),
            seed: 4,
            ..tiny()
        };
        let a = train(&c).unwrap();
        let b = train(&c).unwrap();
        let strip = |r: &gdpp::train::RunResult| {
            r.records
                .iter()
                .map(|m| {
                    (
                        m.iteration,
                        m.modes_captured,
                        m.hq_fraction.to_bits(),
                        m.mode_kl.to_bits(),
                    )
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&a), strip(&b));
        let losses = |r: &gdpp::train::RunResult| {
            r.losses
                .iter()
                .map(|l| {
                    (
                        l.primary.to_bits(),
                        l.secondary.to_bits(),
                        l.diversity.map(f64::to_bits),
                    )
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(losses(&a), losses(&b));
    }
}

#[test]
fn checkpoint_count_follows_the_schedule() {
    for (iterations, every) in [(6, 3), (7, 3), (2, 5), (0, 4)] {
        let run = train(&TrainConfig {
            iterations,
            eval_every: every,
            ..tiny()
        })
        .unwrap();
        assert_eq!(run.records.len(), iterations / every + 1);
    }
}

#[test]
fn vae_overfits_a_single_batch() {
    let arch = ArchConfig {
        hidden: vec![32, 32],
        latent_dim: 2,
    };
    let mut nets = VaeNets::new(2, &arch, 1).unwrap();
    let spec = make_ring();
    // σ → 0: the batch is the eight centers
    let x = Tensor::from_matrix(&Matrix::from_fn(2, 8, |i, j| spec.centers[j][i]));
    let mut enc_opt = Adam::new(AdamConfig::VAE, nets.encoder.params());
    let mut dec_opt = Adam::new(AdamConfig::VAE, nets.decoder.params());
    let mut r = rng(7);
    let mut mse = Vec::new();
    for _ in 0..3000 {
        let tape = Tape::new();
        let e = nets.encoder.bind(&tape);
        let d = nets.decoder.bind(&tape);
        let out = vae_forward(&tape, &e, &d, &x, &mut r).unwrap();
        let diff = tape.sub(&x, &out.reconstruction).unwrap();
        let recon = tape
            .mul_scalar(&tape.sum(&tape.mul(&diff, &diff).unwrap()).unwrap(), 1.0 / 8.0)
            .unwrap();
        // a small KL weight lets the posterior shrink enough to memorize
        let kl = tape
            .mul_scalar(&gaussian_kl(&tape, &out.mu, &out.log_var).unwrap(), 1e-4)
            .unwrap();
        let loss = tape.add(&recon, &kl).unwrap();
        mse.push(recon.item());
        let g = tape.backward(&loss).unwrap();
        enc_opt.step(nets.encoder.params_mut(), &e.grads(&g)).unwrap();
        dec_opt.step(nets.decoder.params_mut(), &d.grads(&g)).unwrap();
    }
    let start = mse[0];
    let end = mse[mse.len() - 50..].iter().sum::<f64>() / 50.0;
    assert!(end < 1e-2 * start, "{start} -> {end}");
}

#[test]
fn batch_sweep_runs_every_size_for_the_same_iterations() {
    let sizes = [4, 8, 16];
    let out = sweep_batch_size(&tiny(), &sizes, 2);
    assert_eq!(out.len(), sizes.len());
    for ((size, run), expected) in out.iter().zip(sizes) {
        let run = run.as_ref().unwrap();
        assert_eq!(*size, expected);
        assert_eq!(run.config.batch, expected);
        assert_eq!(run.last().iteration, tiny().iterations);
    }
}

#[test]
fn iteration_sweep_uses_the_checkpoints() {
    let run = sweep_iterations(
        &TrainConfig {
            iterations: 9,
            ..tiny()
        },
        16,
    )
    .unwrap();
    assert_eq!(run.config.batch, 16);
    let its: Vec<usize> = run.records.iter().map(|r| r.iteration).collect();
    assert_eq!(its, [0, 3, 6, 9]);
}

#[test]
fn divergence_names_the_iteration() {
    let mut c = tiny();
    c.gan_adam.lr = 1e300;
    match train(&c) {
        Err(gdpp::Error::Diverged { iteration, .. }) => assert!(iteration < c.iterations),
        other => panic!("expected divergence, got {:?}", other.map(|r| r.last().clone())),
    }
}
