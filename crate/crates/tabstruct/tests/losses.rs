mod common;

use candle_core::{DType, Device, Tensor};
use common::{finite_difference_error, random_tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tabstruct::losses::{
    batched_visual_alignment_loss, coordinate_loss, per_image_weights, regression_loss,
    structure_loss, total_loss, visual_alignment_loss, LossParts, LossWeights,
};
use tabstruct::Error;

fn scalar(t: &Tensor) -> f64 {
    t.to_dtype(DType::F64).unwrap().to_scalar().unwrap()
}

fn u32s(v: Vec<u32>, shape: &[usize]) -> Tensor {
    Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
}

#[test]
fn uniform_structure_loss_is_n_minus_one_log_v() {
    for (t, v) in [(5usize, 18usize), (12, 30)] {
        let logits = Tensor::zeros((1, t, v), DType::F64, &Device::Cpu).unwrap();
        let targets = u32s((0..t as u32).map(|i| i % v as u32).collect(), &[1, t]);
        let mask = Tensor::ones((1, t), DType::F64, &Device::Cpu).unwrap();
        let got = scalar(&structure_loss(&logits, &targets, &mask).unwrap());
        // A sequence of n = t + 1 tokens has t predicted positions.
        assert!((got - t as f64 * (v as f64).ln()).abs() < 1e-9);
    }
}

#[test]
fn structure_loss_ignores_masked_positions_and_averages_over_batch() {
    let logits = Tensor::zeros((2, 4, 10), DType::F64, &Device::Cpu).unwrap();
    let targets = u32s(vec![1; 8], &[2, 4]);
    let mask = Tensor::new(
        &[[1.0f64, 1.0, 0.0, 0.0], [1.0, 1.0, 1.0, 1.0]],
        &Device::Cpu,
    )
    .unwrap();
    let got = scalar(&structure_loss(&logits, &targets, &mask).unwrap());
    assert!((got - 3.0 * 10f64.ln()).abs() < 1e-9);
}

#[test]
fn uniform_coordinate_loss_is_four_log_bins() {
    for (k, n_bins) in [(1usize, 160usize), (7, 608)] {
        let logits = Tensor::zeros((k, 4, n_bins + 1), DType::F64, &Device::Cpu).unwrap();
        let targets = u32s((0..4 * k as u32).collect(), &[k, 4]);
        let got = coordinate_loss(&logits, &targets, None).unwrap();
        assert!(!got.skipped);
        assert!((scalar(&got.value) - 4.0 * ((n_bins + 1) as f64).ln()).abs() < 1e-9);
    }
}

#[test]
fn identical_pairs_give_k_log_k() {
    for k in [1usize, 2, 5, 9] {
        let f = Tensor::ones((k, 8), DType::F64, &Device::Cpu).unwrap();
        let got = scalar(&visual_alignment_loss(&f, &f, 0.1).unwrap().value);
        assert!(
            (got - k as f64 * (k as f64).ln()).abs() < 1e-9,
            "K = {k}: {got}"
        );
    }
}

#[test]
fn empty_inputs_are_skipped_zeros() {
    let logits = Tensor::zeros((0, 4, 11), DType::F64, &Device::Cpu).unwrap();
    let targets = u32s(vec![], &[0, 4]);
    let c = coordinate_loss(&logits, &targets, None).unwrap();
    assert!(c.skipped && scalar(&c.value) == 0.0);
    let f = Tensor::zeros((0, 8), DType::F64, &Device::Cpu).unwrap();
    let a = visual_alignment_loss(&f, &f, 0.1).unwrap();
    assert!(a.skipped && scalar(&a.value) == 0.0);
    let p = Tensor::zeros((0, 4), DType::F64, &Device::Cpu).unwrap();
    assert!(regression_loss(&p, &p, None).unwrap().skipped);
}

#[test]
fn out_of_range_coordinate_target_is_refused() {
    let logits = Tensor::zeros((1, 4, 11), DType::F64, &Device::Cpu).unwrap();
    let targets = u32s(vec![0, 1, 2, 11], &[1, 4]);
    assert!(matches!(
        coordinate_loss(&logits, &targets, None),
        Err(Error::Vocabulary {
            token: 11,
            size: 11
        })
    ));
}

#[test]
fn per_image_weights_average_images_with_cells() {
    let w = per_image_weights(&[0, 0, 2, 2, 2, 2], 4);
    assert_eq!(w, vec![0.25, 0.25, 0.125, 0.125, 0.125, 0.125]);
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn batched_alignment_equals_mean_of_per_image_losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let f = random_tensor(&[5, 6], &mut rng, DType::F64);
    let g = random_tensor(&[5, 6], &mut rng, DType::F64);
    let a = scalar(
        &visual_alignment_loss(
            &f.narrow(0, 0, 2).unwrap(),
            &g.narrow(0, 0, 2).unwrap(),
            0.2,
        )
        .unwrap()
        .value,
    );
    let b = scalar(
        &visual_alignment_loss(
            &f.narrow(0, 2, 3).unwrap(),
            &g.narrow(0, 2, 3).unwrap(),
            0.2,
        )
        .unwrap()
        .value,
    );
    let both = scalar(
        &batched_visual_alignment_loss(&f, &g, 0.2, &[0, 0, 1, 1, 1], 2)
            .unwrap()
            .value,
    );
    assert!((both - (a + b) / 2.0).abs() < 1e-9);
}

#[test]
fn regression_loss_is_weighted_l1() {
    let p = Tensor::new(
        &[[0.5f64, 0.5, 0.5, 0.5], [0.0, 0.0, 0.0, 0.0]],
        &Device::Cpu,
    )
    .unwrap();
    let t = Tensor::new(
        &[[0.25f64, 0.5, 0.75, 0.5], [0.0, 0.0, 0.0, 1.0]],
        &Device::Cpu,
    )
    .unwrap();
    assert!((scalar(&regression_loss(&p, &t, None).unwrap().value) - 0.75).abs() < 1e-12);
    assert!(
        (scalar(&regression_loss(&p, &t, Some(&[1.0, 0.0])).unwrap().value) - 0.5).abs() < 1e-12
    );
}

#[test]
fn total_loss_weights_components_and_flags_divergence() {
    let s = |v: f64| Tensor::new(v, &Device::Cpu).unwrap();
    let w = LossWeights {
        lambda_structure: 1.0,
        lambda_coord: 2.0,
        lambda_align: 0.5,
        tau: 0.1,
    };
    let parts = LossParts {
        structure: s(1.0),
        coord: s(2.0),
        align: Some(s(4.0)),
    };
    assert!((scalar(&total_loss(&parts, &w, 0).unwrap()) - 7.0).abs() < 1e-12);
    let off = LossParts {
        align: None,
        ..parts.clone()
    };
    assert!((scalar(&total_loss(&off, &w, 0).unwrap()) - 5.0).abs() < 1e-12);
    let bad = LossParts {
        coord: s(f64::NAN),
        ..parts
    };
    assert!(matches!(
        total_loss(&bad, &w, 9),
        Err(Error::Divergence { step: 9, .. })
    ));
}

#[test]
fn invalid_loss_weights_are_rejected() {
    let w = LossWeights {
        tau: 0.0,
        ..LossWeights::default()
    };
    assert!(w.validate().is_err());
    let w = LossWeights {
        lambda_coord: -1.0,
        ..LossWeights::default()
    };
    assert!(w.validate().is_err());
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..5 {
        let (b, t, v) = (2, rng.random_range(2..6), rng.random_range(3..9));
        let logits = (random_tensor(&[b, t, v], &mut rng, DType::F64) * 3.0).unwrap();
        let targets = u32s(
            (0..b * t).map(|_| rng.random_range(0..v as u32)).collect(),
            &[b, t],
        );
        let mask = Tensor::from_vec(
            (0..b * t)
                .map(|_| rng.random_range(0..2) as f64)
                .collect::<Vec<f64>>(),
            (b, t),
            &Device::Cpu,
        )
        .unwrap();
        let f = |x: &Tensor| structure_loss(x, &targets, &mask).unwrap();
        assert!(finite_difference_error(&f, &logits, 1e-5) < 1e-6);

        let k = rng.random_range(1..4);
        let logits = random_tensor(&[k, 4, v], &mut rng, DType::F64);
        let targets = u32s(
            (0..4 * k).map(|_| rng.random_range(0..v as u32)).collect(),
            &[k, 4],
        );
        let f = |x: &Tensor| coordinate_loss(x, &targets, None).unwrap().value;
        assert!(finite_difference_error(&f, &logits, 1e-5) < 1e-6);

        let d = rng.random_range(2..8);
        let a = random_tensor(&[k, d], &mut rng, DType::F64);
        let g = random_tensor(&[k, d], &mut rng, DType::F64);
        let f = |x: &Tensor| visual_alignment_loss(x, &g, 0.5).unwrap().value;
        assert!(finite_difference_error(&f, &a, 1e-5) < 1e-6);
    }
}
