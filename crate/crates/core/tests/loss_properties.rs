mod common;

use common::*;
use gdpp::autodiff::{Tape, Tensor};
use gdpp::linalg::Matrix;
use gdpp::loss::{build_kernel, extract_features, gdpp, gdpp_with, FeatureBatch, GdppVariant, Origin};
use gdpp::models::gaussian;
use proptest::prelude::*;

fn terms(real: &Matrix, fake: &Matrix) -> (f64, f64) {
    let r = FeatureBatch::from_matrix(real, Origin::Real).unwrap();
    let f = FeatureBatch::from_matrix(fake, Origin::Fake).unwrap();
    let out = gdpp_with(&Tape::new(), &r, &f, &GdppVariant::Full.into()).unwrap();
    (out.magnitude.unwrap(), out.structure.unwrap())
}

fn permute_columns(m: &Matrix, perm: &[usize]) -> Matrix {
    Matrix::from_fn(m.rows(), m.cols(), |i, j| m.get(i, perm[j]))
}

#[test]
fn kernel_matches_naive_gram() {
    let f = FeatureBatch::from_matrix(&gaussian(&mut rng(1), 4, 3), Origin::Fake).unwrap();
    let phi = f.features().to_matrix();
    let k = build_kernel(&f).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            let naive: f64 = (0..4).map(|r| phi.get(r, i) * phi.get(r, j)).sum();
            assert!((k.get(i, j) - naive).abs() <= 1e-14);
        }
    }
}

#[test]
fn determinant_loss_grows_as_two_features_align() {
    // B = 2 unit columns at angle θ: det K = 1 − cos²θ
    let batch = |theta: f64| Matrix::from_vec(2, 2, vec![1.0, theta.cos(), 0.0, theta.sin()]).unwrap();
    let real = FeatureBatch::from_matrix(&batch(1.0), Origin::Real).unwrap();
    let mut last = f64::NEG_INFINITY;
    for step in 0..=20 {
        let theta = std::f64::consts::FRAC_PI_2 * (1.0 - step as f64 / 21.0);
        let fake = FeatureBatch::from_matrix(&batch(theta), Origin::Fake).unwrap();
        let loss = gdpp(&Tape::new(), &real, &fake, GdppVariant::ExactDeterminant)
            .unwrap()
            .item();
        let expected = -(1.0 - theta.cos().powi(2) + 1e-6).ln();
        assert!((loss - expected).abs() < 1e-12);
        assert!(loss > last, "loss must increase with |φ₁·φ₂|");
        last = loss;
    }
}

#[test]
fn only_the_fake_side_gets_gradients() {
    let real_acts = Tensor::from_matrix(&gaussian(&mut rng(5), 5, 4));
    let fake_acts = Tensor::from_matrix(&gaussian(&mut rng(6), 5, 4));
    for v in GdppVariant::ALL {
        let tape = Tape::new();
        let r = tape.leaf(real_acts.clone());
        let f = tape.leaf(fake_acts.clone());
        let real = extract_features(&tape, &r, Origin::Real).unwrap();
        let fake = extract_features(&tape, &f, Origin::Fake).unwrap();
        let g = tape.backward(&gdpp(&tape, &real, &fake, v).unwrap()).unwrap();
        assert!(g.wrt(&r).is_none(), "{v}");
        assert!(g.wrt(&f).is_some(), "{v}");
    }
}

#[test]
fn squared_magnitude_and_abs_cosine_options() {
    use gdpp::loss::{GdppConfig, MagnitudeForm};
    let real = FeatureBatch::from_matrix(&activations_with_gap(&mut rng(7), 6, 4, 0.05), Origin::Real).unwrap();
    let acts = activations_with_gap(&mut rng(8), 6, 4, 0.05);
    let fake = FeatureBatch::from_matrix(&acts, Origin::Fake).unwrap();
    let abs = gdpp_with(&Tape::new(), &real, &fake, &GdppVariant::MagnitudeOnly.into()).unwrap();
    let cfg = GdppConfig {
        variant: GdppVariant::MagnitudeOnly,
        magnitude: MagnitudeForm::Squared,
        abs_cosine: false,
    };
    let sq = gdpp_with(&Tape::new(), &real, &fake, &cfg).unwrap();
    let lr = kernel_lambdas(&real.features().to_matrix());
    let lf = kernel_lambdas(&acts);
    let expect_abs: f64 = lr.iter().zip(&lf).map(|(a, b)| (a - b).abs()).sum();
    let expect_sq: f64 = lr.iter().zip(&lf).map(|(a, b)| (a - b).powi(2)).sum();
    assert!((abs.total.item() - expect_abs).abs() < 1e-12);
    assert!((sq.total.item() - expect_sq).abs() < 1e-12);

    // |cos| can only lower the structure term
    let plain = gdpp_with(&Tape::new(), &real, &fake, &GdppVariant::StructureOnly.into()).unwrap();
    let cfg = GdppConfig {
        variant: GdppVariant::StructureOnly,
        abs_cosine: true,
        ..GdppConfig::default()
    };
    let blind = gdpp_with(&Tape::new(), &real, &fake, &cfg).unwrap();
    assert!(blind.total.item() <= plain.total.item() + 1e-15);

    // and the squared and |cos| gradients still check out
    for cfg in [
        GdppConfig {
            variant: GdppVariant::Full,
            magnitude: MagnitudeForm::Squared,
            abs_cosine: false,
        },
        GdppConfig {
            variant: GdppVariant::Full,
            magnitude: MagnitudeForm::Absolute,
            abs_cosine: true,
        },
    ] {
        let (a, n) = gdpp_gradients(&real, &acts, &cfg, 1e-5);
        assert!(rel_err(&a, &n) < 1e-4);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn permuting_both_batches_changes_nothing(seed in any::<u64>(), b in 2usize..=6, shift in 1usize..6) {
        let mut r = rng(seed);
        let d = b + 2;
        let real = activations_with_gap(&mut r, d, b, 1e-3);
        let fake = activations_with_gap(&mut r, d, b, 1e-3);
        prop_assume!(sign_margin(&real) > 1e-6 && sign_margin(&fake) > 1e-6);
        let perm: Vec<usize> = (0..b).map(|j| (j + shift) % b).collect();
        let (m0, s0) = terms(&real, &fake);
        let (m1, s1) = terms(&permute_columns(&real, &perm), &permute_columns(&fake, &perm));
        prop_assert!((m0 - m1).abs() <= 1e-10);
        prop_assert!((s0 - s1).abs() <= 1e-10);
    }

    #[test]
    fn magnitude_term_is_bounded_by_twice_the_batch(seed in any::<u64>(), b in 1usize..=10, d in 1usize..=10) {
        let mut r = rng(seed);
        let (m, _) = terms(&gaussian(&mut r, d, b), &gaussian(&mut r, d, b));
        prop_assert!((0.0..=2.0 * b as f64).contains(&m));
    }
}
