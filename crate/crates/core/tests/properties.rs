use proptest::prelude::*;
use stencilseer::autodiff::ops::{conv2d_valid, transpose_conv2d, zero_sum_penalty};
use stencilseer::datagen::{generate_dataset, GenConfig};
use stencilseer::model::{
    build_model, parse_weights, train, weights_to_text, ModelConfig, TrainConfig,
};
use stencilseer::verify::{analytic_stencil, compose_stack, kernel_similarity, residual_oracle};
use stencilseer::{Family, Kernel2x2, KernelStack, Tensor3};

fn tensor(rows: usize, cols: usize, chans: usize) -> impl Strategy<Value = Tensor3> {
    prop::collection::vec(-1.0f64..1.0, rows * cols * chans)
        .prop_map(move |d| Tensor3::from_vec(rows, cols, chans, d).unwrap())
}

fn kernel(cin: usize) -> impl Strategy<Value = Kernel2x2> {
    prop::collection::vec(-1.0f64..1.0, 4 * cin).prop_map(move |w| Kernel2x2::new(cin, w).unwrap())
}

fn close(a: &Tensor3, b: &Tensor3, tol: f64) -> bool {
    let scale = a.max_abs().max(b.max_abs()).max(1.0);
    a.dims() == b.dims()
        && a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() <= tol * scale)
}

/// Kernels of the transpose map: output channel `ch`, input channel `k`.
fn adjoint_kernels(ks: &[Kernel2x2]) -> Vec<Kernel2x2> {
    let cin = ks[0].cin();
    (0..cin)
        .map(|ch| {
            let mut w = Vec::with_capacity(4 * ks.len());
            for i in 0..2 {
                for j in 0..2 {
                    for k in ks {
                        w.push(k.get(i, j, ch));
                    }
                }
            }
            Kernel2x2::new(ks.len(), w).unwrap()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn transpose_conv_is_the_adjoint(
        x in tensor(6, 5, 2),
        y in tensor(5, 4, 3),
        ks in prop::collection::vec(kernel(2), 3),
    ) {
        let lhs = conv2d_valid(&x, &ks).unwrap().dot(&y).unwrap();
        let rhs = x.dot(&transpose_conv2d(&y, &adjoint_kernels(&ks)).unwrap()).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn conv_is_linear(
        x in tensor(5, 5, 1),
        y in tensor(5, 5, 1),
        k in kernel(1),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let mut mix = x.scaled(a);
        for (m, v) in mix.data_mut().iter_mut().zip(y.data()) {
            *m += b * v;
        }
        let lhs = conv2d_valid(&mix, std::slice::from_ref(&k)).unwrap();
        let cx = conv2d_valid(&x, std::slice::from_ref(&k)).unwrap();
        let cy = conv2d_valid(&y, std::slice::from_ref(&k)).unwrap();
        let mut rhs = cx.scaled(a);
        for (r, v) in rhs.data_mut().iter_mut().zip(cy.data()) {
            *r += b * v;
        }
        prop_assert!(close(&lhs, &rhs, 1e-12));
    }

    #[test]
    fn composition_matches_sequential_convolution(
        image in tensor(9, 8, 1),
        ks in prop::collection::vec(kernel(1), 1..4),
    ) {
        let mut seq = image.clone();
        for k in &ks {
            seq = conv2d_valid(&seq, std::slice::from_ref(k)).unwrap();
        }
        let stencil = compose_stack(&KernelStack::chain(ks)).unwrap();
        let once = stencil.apply(&image, 0).unwrap();
        prop_assert!(close(&seq, &once, 1e-12));
    }

    #[test]
    fn similarity_is_symmetric_and_scale_free(
        a in kernel(1),
        b in kernel(1),
        s in prop_oneof![-50.0f64..-0.01, 0.01f64..50.0],
    ) {
        use stencilseer::verify::Stencil;
        let (sa, sb) = (Stencil::from_kernel(&a, 0), Stencil::from_kernel(&b, 0));
        let ab = kernel_similarity(&sa, &sb).unwrap();
        prop_assert!((ab - kernel_similarity(&sb, &sa).unwrap()).abs() <= 1e-14);
        prop_assert!((ab - kernel_similarity(&sa.scaled(s), &sb).unwrap()).abs() <= 1e-12);
        prop_assert!((ab - kernel_similarity(&sa, &sb.scaled(s)).unwrap()).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn zero_sum_kernels_annihilate_constants(
        w in prop::collection::vec(-8i32..=8, 3),
        value in -100i32..100,
    ) {
        let last = -(w[0] + w[1] + w[2]);
        let k = Kernel2x2::single([
            [f64::from(w[0]), f64::from(w[1])],
            [f64::from(w[2]), f64::from(last)],
        ]);
        prop_assert_eq!(zero_sum_penalty([&k], 0.01), 0.0);
        let field = Tensor3::filled(6, 5, 1, f64::from(value));
        let out = conv2d_valid(&field, &[k]).unwrap();
        prop_assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn weights_text_is_bit_exact(seed in any::<u64>(), k1 in 1usize..4) {
        let cfg = ModelConfig::for_family(Family::Coupled).with_widths(vec![k1.max(2), k1, 2]);
        let m = build_model(&cfg, seed).unwrap();
        let back = parse_weights(&weights_to_text(&m)).unwrap();
        prop_assert_eq!(back.encoder, m.encoder);
    }

    #[test]
    fn model_of_zero_image_is_zero(seed in any::<u64>(), k1 in 1usize..4) {
        let cfg = ModelConfig::for_family(Family::Elliptic).with_widths(vec![k1, 1]).with_decoder();
        let m = build_model(&cfg, seed).unwrap();
        let enc = m.encode(&Tensor3::zeros(10, 9, 1)).unwrap();
        prop_assert!(enc.pooled.data().iter().all(|&v| v == 0.0));
        let rec = m.decode(&enc).unwrap();
        prop_assert_eq!(rec.dims(), (10, 9, 1));
        prop_assert!(rec.data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn residual_is_linear_in_the_sample() {
    for family in [Family::Hyperbolic, Family::Elliptic, Family::Parabolic] {
        let gen = GenConfig::new(family).with_samples(3).with_seed(5);
        let ds = generate_dataset(&gen).unwrap();
        let s = analytic_stencil(family, gen.cfl).unwrap().stencil;
        let lumpy = s.scaled(1.0 / 3.0);
        for sample in &ds.samples {
            for st in [&s, &lumpy] {
                let r1 = residual_oracle(st, sample, 0).unwrap();
                let r2 = residual_oracle(st, &sample.scaled(2.0), 0).unwrap();
                assert_eq!(r2, 2.0 * r1, "{family}");
            }
        }
    }
}

#[test]
fn only_the_own_stencil_annihilates_each_family() {
    let families = [Family::Hyperbolic, Family::Elliptic, Family::Parabolic];
    for data in families {
        let gen = GenConfig::new(data).with_samples(4).with_seed(9);
        let ds = generate_dataset(&gen).unwrap();
        let power = ds.samples.iter().map(|s| s.image.max_abs()).fold(0.0, f64::max);
        for probe in families {
            let st = analytic_stencil(probe, gen.cfl).unwrap().stencil;
            let worst = ds
                .samples
                .iter()
                .map(|s| residual_oracle(&st, s, 0).unwrap())
                .fold(0.0, f64::max);
            if probe == data {
                assert!(worst <= 1e-10, "{data} under own stencil: {worst:e}");
            } else {
                assert!(worst > 1e-3 * power, "{data} under {probe}: {worst:e}");
            }
        }
    }
}

#[test]
fn training_is_seed_deterministic_and_best_is_monotone() {
    let gen = GenConfig::new(Family::Hyperbolic).with_samples(8);
    let ds = generate_dataset(&gen).unwrap();
    let cfg = TrainConfig {
        epochs: 4,
        steps_per_epoch: 30,
        stop_threshold: 0.0,
        seed: 3,
        ..TrainConfig::default()
    };
    let run = || {
        let mut m = build_model(&ModelConfig::for_family(Family::Hyperbolic), 3).unwrap();
        train(&mut m, &ds, &cfg).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(a.final_kernels, b.final_kernels);
    assert!(a.epochs.windows(2).all(|w| w[1].best_val_mse <= w[0].best_val_mse));
    assert!(a.epochs.iter().all(|e| e.train_mse.is_finite() && e.val_mse.is_finite()));
}

#[test]
fn joint_decoder_training_reconstructs_the_image() {
    let gen = GenConfig::new(Family::Hyperbolic).with_samples(10);
    let ds = generate_dataset(&gen).unwrap();
    let mut m = build_model(&ModelConfig::for_family(Family::Hyperbolic).with_decoder(), 2).unwrap();
    let sample = &ds.samples[ds.val[0]];
    let before = m.total_loss(sample).unwrap().reconstruction;
    let cfg = TrainConfig {
        epochs: 5,
        steps_per_epoch: 100,
        stop_threshold: 0.0,
        seed: 2,
        ..TrainConfig::default()
    };
    train(&mut m, &ds, &cfg).unwrap();
    let after = m.total_loss(sample).unwrap().reconstruction;
    assert!(after <= 1e-4, "reconstruction MSE {after:e}");
    assert!(after < before, "{after:e} vs {before:e}");
}
