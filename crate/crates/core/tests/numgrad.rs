mod common;

use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ulab::numgrad::{
    adamw_step, ce_loss_with_offset, log_softmax_row, lr_at, read_checkpoint, softmax_rows, write_checkpoint,
    Activation, LrSchedule, MlpModel, OptimState,
};
use ulab::{Mlp, Mlp64};

#[test]
fn finite_differences_agree_with_every_adjoint() {
    for check in common::all_gradient_checks(25, 11) {
        assert!(check.passed(20), "{check:?}");
    }
}

#[test]
fn second_seed_of_gradient_checks() {
    for check in common::all_gradient_checks(20, 977) {
        assert!(check.passed(20), "{check:?}");
    }
}

#[test]
fn single_and_double_precision_forward_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let sizes = [12, 16, 8, 4];
    let acts = [Activation::Relu, Activation::Relu, Activation::Identity];
    let net64 = Mlp64::he_uniform(&sizes, &acts, &mut rng).unwrap();
    let net32 = Mlp::from_params(&sizes, &acts, net64.params().iter().map(|&p| p as f32).collect()).unwrap();
    let x64 = Array2::from_shape_fn((9, 12), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.4);
    let x32 = x64.mapv(|v| v as f32);
    let a = net64.forward(x64.view()).unwrap();
    let b = net32.forward(x32.view()).unwrap();
    for (u, v) in a.iter().zip(b.iter()) {
        assert!((u - *v as f64).abs() < 1e-5, "{u} vs {v}");
    }
}

#[test]
fn checkpoint_files_reload_the_same_function() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = Mlp::he_uniform(&[6, 5, 3], &[Activation::Relu, Activation::Identity], &mut rng).unwrap();
    let path = dir.path().join("net.ck");
    write_checkpoint(&net, 42, &path).unwrap();
    let (back, header) = read_checkpoint::<f32>(&path).unwrap();
    assert_eq!(header.step_count, 42);
    assert_eq!(back, net);

    // A double-precision reader sees the stored single-precision values.
    let (wide, _) = read_checkpoint::<f64>(&path).unwrap();
    assert!(wide.params().iter().zip(net.params()).all(|(a, &b)| *a == b as f64));

    std::fs::write(&path, b"ULCK").unwrap();
    assert!(read_checkpoint::<f32>(&path).is_err());
}

/// Straight-line AdamW written from the update rule, for comparison.
fn adamw_reference(p0: f64, grads: &[f64], lr: f64, wd: f64) -> f64 {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let (mut p, mut m, mut v) = (p0, 0.0, 0.0);
    for (t, g) in grads.iter().enumerate() {
        let t = t as i32 + 1;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let step = (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
        p -= lr * (step + wd * p);
    }
    p
}

#[test]
fn adamw_matches_a_straight_line_reference() {
    let grads = [0.3, -1.2, 0.05, 2.0, -0.7, 0.0, 0.4];
    let (lr, wd) = (0.01, 0.05);
    let mut params = vec![0.8f64, -0.2];
    let mut state = OptimState::<f64>::new(2, lr, wd);
    for g in grads {
        adamw_step(&mut params, &mut state, &[g, -g], lr).unwrap();
    }
    assert_eq!(state.step_count, grads.len() as u64);
    let neg: Vec<f64> = grads.iter().map(|g| -g).collect();
    assert!((params[0] - adamw_reference(0.8, &grads, lr, wd)).abs() < 1e-14);
    assert!((params[1] - adamw_reference(-0.2, &neg, lr, wd)).abs() < 1e-14);
}

#[test]
fn cosine_schedule_decays_from_base_to_zero() {
    let s = LrSchedule::cosine(0.5, 100);
    assert_eq!(lr_at(&s, 0), 0.5);
    assert!((lr_at(&s, 50) - 0.25).abs() < 1e-12);
    assert_eq!(lr_at(&s, 100), 0.0);
    assert_eq!(lr_at(&s, 1000), 0.0);
    assert_eq!(lr_at(&LrSchedule::constant(0.1), 77), 0.1);
}

#[test]
fn offsets_that_mask_a_class_remove_it_from_the_softmax() {
    let logits = array![[2.0f64, 1.0, 0.0]];
    let offsets = array![[0.0f64, -1e4, 0.0]];
    let (loss, grad) = ce_loss_with_offset(logits.view(), offsets.view(), &[0]).unwrap();
    let expected = -(2.0f64.exp() / (2.0f64.exp() + 1.0)).ln();
    assert!((loss - expected).abs() < 1e-12);
    assert!(grad[[0, 1]].abs() < 1e-300);
}

fn small_matrix() -> impl Strategy<Value = Array2<f64>> {
    (1usize..5, 2usize..6).prop_flat_map(|(b, k)| {
        proptest::collection::vec(-20.0f64..20.0, b * k).prop_map(move |v| Array2::from_shape_vec((b, k), v).unwrap())
    })
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(logits in small_matrix()) {
        let p = softmax_rows(logits.view());
        for (row, lrow) in p.rows().into_iter().zip(logits.rows()) {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            let ls = log_softmax_row(lrow);
            for (a, b) in row.iter().zip(&ls) {
                prop_assert!((a.ln() - b).abs() < 1e-9 || *a < 1e-300);
            }
        }
    }

    #[test]
    fn a_shared_shift_of_offsets_leaves_the_loss_unchanged(logits in small_matrix(), c in -50.0f64..50.0, seed in 0u64..1000) {
        let (b, k) = logits.dim();
        let labels: Vec<usize> = (0..b).map(|i| (i + seed as usize) % k).collect();
        let offsets = Array2::from_shape_fn((b, k), |(i, j)| ((i * 3 + j + seed as usize) % 5) as f64 * -0.7);
        let shifted = offsets.mapv(|v| v + c);
        let (l0, g0) = ce_loss_with_offset(logits.view(), offsets.view(), &labels).unwrap();
        let (l1, g1) = ce_loss_with_offset(logits.view(), shifted.view(), &labels).unwrap();
        prop_assert!((l0 - l1).abs() < 1e-9);
        prop_assert!(common::max_abs_diff(&g0, &g1) < 1e-12);
    }

    #[test]
    fn gradient_rows_sum_to_zero(logits in small_matrix()) {
        let (b, k) = logits.dim();
        let labels: Vec<usize> = (0..b).map(|i| i % k).collect();
        let zeros = Array2::zeros((b, k));
        let (_, g) = ce_loss_with_offset(logits.view(), zeros.view(), &labels).unwrap();
        for row in g.rows() {
            prop_assert!(row.sum().abs() < 1e-12);
        }
    }

    #[test]
    fn forward_is_row_independent(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = MlpModel::<f64>::he_uniform(&[4, 6, 3], &[Activation::Relu, Activation::Identity], &mut rng).unwrap();
        let x = Array2::from_shape_fn((5, 4), |(i, j)| ((seed as usize + i * 5 + j) % 9) as f64 - 4.0);
        let all = net.forward(x.view()).unwrap();
        for i in 0..5 {
            let one = net.forward(x.slice(ndarray::s![i..i + 1, ..])).unwrap();
            prop_assert_eq!(one.row(0), all.row(i));
        }
    }
}
