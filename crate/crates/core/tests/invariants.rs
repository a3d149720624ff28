//! Property tests of the estimation, adjustment and evaluation invariants.

mod common;

use ndarray::{Array1, Array2};
use proptest::prelude::*;
use ulab::biasproxy::{
    calibrate_rows, calibrated_conditional, conditional_from_joint, hard_assignments, soft_confusion, JointEstimate,
};
use ulab::metrics::{group_balanced_accuracy, unsupervised_balanced_val, unsupervised_worst_group_val};
use ulab::numgrad::ce_loss_with_offset;
use ulab::sslpre::{infonce_loss, l2_normalize_rows};
use ulab::synthdata::BiasLabels;

/// Logits, labels and class count for a small labeled set.
fn labeled_logits() -> impl Strategy<Value = (Array2<f64>, Vec<usize>, usize)> {
    (2usize..7, 1usize..60).prop_flat_map(|(k, n)| {
        (
            proptest::collection::vec(-8.0f64..8.0, n * k),
            proptest::collection::vec(0..k, n),
        )
            .prop_map(move |(v, y)| (Array2::from_shape_vec((n, k), v).unwrap(), y, k))
    })
}

/// Predictions, labels and hidden groups over `k` classes and `l` bias values.
fn grouped_predictions() -> impl Strategy<Value = (Vec<usize>, Vec<u16>, Vec<u16>, usize, usize)> {
    (2usize..6, 2usize..6, 1usize..120).prop_flat_map(|(k, l, n)| {
        (
            proptest::collection::vec(0..k, n),
            proptest::collection::vec(0..k as u16, n),
            proptest::collection::vec(0..l as u16, n),
        )
            .prop_map(move |(p, y, z)| (p, y, z, k, l))
    })
}

fn permutation(n: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..n).collect::<Vec<_>>()).prop_shuffle()
}

proptest! {
    #[test]
    fn soft_confusion_matches_brute_force_and_label_marginal(
        (logits, labels, k) in labeled_logits(),
        tau in 0.05f64..5.0,
    ) {
        let joint = soft_confusion(calibrate_rows(logits.view(), tau).view(), &labels, k).unwrap();
        let oracle = common::brute_soft_confusion(&logits, &labels, k, tau);
        prop_assert!(common::max_abs_diff(&joint, &oracle) <= 1e-12);
        let marginal = common::label_marginal(&labels, k);
        for y in 0..k {
            prop_assert!((joint.row(y).sum() - marginal[y]).abs() <= 1e-12);
        }
        prop_assert!((joint.sum() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn soft_confusion_ignores_sample_order(
        ((logits, labels, k), perm) in labeled_logits().prop_flat_map(|d| {
            let n = d.1.len();
            (Just(d), permutation(n))
        }),
        tau in 0.05f64..5.0,
    ) {
        let probs = calibrate_rows(logits.view(), tau);
        let shuffled = probs.select(ndarray::Axis(0), &perm);
        let shuffled_labels: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
        let a = soft_confusion(probs.view(), &labels, k).unwrap();
        let b = soft_confusion(shuffled.view(), &shuffled_labels, k).unwrap();
        prop_assert!(common::max_abs_diff(&a, &b) <= 1e-12);
    }

    #[test]
    fn duplicating_the_training_set_leaves_the_joint_unchanged(
        (logits, labels, k) in labeled_logits(),
        copies in 2usize..4,
    ) {
        let probs = calibrate_rows(logits.view(), 1.0);
        let idx: Vec<usize> = (0..copies).flat_map(|_| 0..labels.len()).collect();
        let dup = probs.select(ndarray::Axis(0), &idx);
        let dup_labels: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let a = soft_confusion(probs.view(), &labels, k).unwrap();
        let b = soft_confusion(dup.view(), &dup_labels, k).unwrap();
        prop_assert!(common::max_abs_diff(&a, &b) <= 1e-12);
    }

    #[test]
    fn calibration_is_invariant_to_a_shared_logit_shift(
        row in proptest::collection::vec(-30.0f64..30.0, 2..10),
        shift in -100.0f64..100.0,
        tau in 0.01f64..10.0,
    ) {
        let a = calibrated_conditional(Array1::from(row.clone()).view(), tau);
        let shifted: Array1<f64> = row.iter().map(|v| v + shift).collect();
        let b = calibrated_conditional(shifted.view(), tau);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn small_temperatures_reach_the_hard_assignment(
        (logits, _, _) in labeled_logits(),
    ) {
        // Snap logits to a 0.5 grid with distinct values per row so the top
        // margin is at least 0.5.
        let mut snapped = logits.clone();
        for mut row in snapped.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v * 2.0).round() * 10.0 + j as f64 * 0.5;
            }
        }
        let soft = calibrate_rows(snapped.view(), 1e-4);
        prop_assert_eq!(soft, hard_assignments(snapped.view()));
    }

    #[test]
    fn smoothed_conditional_columns_are_distributions(
        (logits, labels, k) in labeled_logits(),
        alpha in 1e-6f64..1.0,
    ) {
        let joint = soft_confusion(calibrate_rows(logits.view(), 1.0).view(), &labels, k).unwrap();
        let cond = conditional_from_joint(joint.view(), alpha).unwrap();
        for col in cond.columns() {
            prop_assert!((col.sum() - 1.0).abs() <= 1e-12);
            prop_assert!(col.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn per_sample_offset_shifts_are_neutral(
        (logits, labels, k) in labeled_logits(),
        eta in 0.0f64..3.0,
        shifts in proptest::collection::vec(-40.0f64..40.0, 60),
    ) {
        let joint = soft_confusion(calibrate_rows(logits.view(), 1.0).view(), &labels, k).unwrap();
        let je = JointEstimate::from_joint(joint, None, labels.len()).unwrap();
        let proxy: Vec<usize> = logits.rows().into_iter().map(|r| ulab::numgrad::argmax_row(r)).collect();
        let n = labels.len();
        let offsets = Array2::from_shape_fn((n, k), |(i, y)| eta * je.conditional[[y, proxy[i]]].ln().max(-30.0));
        let shifted = Array2::from_shape_fn((n, k), |(i, y)| offsets[[i, y]] + shifts[i]);
        let model = logits.mapv(|v| v * 0.3);
        let (l0, g0) = ce_loss_with_offset(model.view(), offsets.view(), &labels).unwrap();
        let (l1, g1) = ce_loss_with_offset(model.view(), shifted.view(), &labels).unwrap();
        prop_assert!((l0 - l1).abs() <= 1e-9 * (1.0 + l0.abs()));
        prop_assert!(common::max_abs_diff(&g0, &g1) <= 1e-12);
    }

    #[test]
    fn balanced_accuracy_bounds_worst_group_accuracy(
        (pred, labels, bias, k, l) in grouped_predictions(),
    ) {
        let bias_labels = BiasLabels { values: &bias, num_values: l };
        let rep = group_balanced_accuracy(&pred, &labels, &bias_labels, k).unwrap();
        prop_assert!(rep.balanced >= rep.worst);
        prop_assert!((0.0..=1.0).contains(&rep.worst));
        let proxy: Vec<usize> = bias.iter().map(|&z| z as usize % k).collect();
        let bal = unsupervised_balanced_val(&pred, &labels, &proxy, k, 1).unwrap();
        let worst = unsupervised_worst_group_val(&pred, &labels, &proxy, k, 1).unwrap();
        prop_assert!(bal >= worst);
    }

    #[test]
    fn proxy_cells_equal_hidden_groups_up_to_relabeling(
        ((pred, labels, bias, k, _), perm) in (2usize..7).prop_flat_map(|k| {
            (1usize..150).prop_flat_map(move |n| {
                (
                    (
                        proptest::collection::vec(0..k, n),
                        proptest::collection::vec(0..k as u16, n),
                        proptest::collection::vec(0..k as u16, n),
                        Just(k),
                        Just(k),
                    ),
                    permutation(k),
                )
            })
        }),
    ) {
        let bias_labels = BiasLabels { values: &bias, num_values: k };
        let rep = group_balanced_accuracy(&pred, &labels, &bias_labels, k).unwrap();
        let proxy: Vec<usize> = bias.iter().map(|&z| perm[z as usize]).collect();
        let bal = unsupervised_balanced_val(&pred, &labels, &proxy, k, 1).unwrap();
        let worst = unsupervised_worst_group_val(&pred, &labels, &proxy, k, 1).unwrap();
        prop_assert_eq!(bal.to_bits(), rep.balanced.to_bits());
        prop_assert_eq!(worst.to_bits(), rep.worst.to_bits());
    }

    #[test]
    fn duplicating_the_evaluation_set_keeps_group_scores(
        (pred, labels, bias, k, l) in grouped_predictions(),
    ) {
        let twice = |v: &[u16]| v.iter().chain(v).copied().collect::<Vec<_>>();
        let pred2: Vec<usize> = pred.iter().chain(&pred).copied().collect();
        let (labels2, bias2) = (twice(&labels), twice(&bias));
        let a = group_balanced_accuracy(&pred, &labels, &BiasLabels { values: &bias, num_values: l }, k).unwrap();
        let b = group_balanced_accuracy(&pred2, &labels2, &BiasLabels { values: &bias2, num_values: l }, k).unwrap();
        prop_assert_eq!(a.balanced, b.balanced);
        prop_assert_eq!(a.worst, b.worst);
        prop_assert_eq!(a.iid, b.iid);
    }

    #[test]
    fn infonce_ignores_the_order_of_negatives(
        (vecs, perm) in (2usize..8, 1usize..20).prop_flat_map(|(d, n)| {
            (proptest::collection::vec(-1.0f64..1.0, (n + 2) * d).prop_map(move |v| Array2::from_shape_vec((n + 2, d), v).unwrap()), permutation(n))
        }),
        tau in 0.05f64..2.0,
    ) {
        prop_assume!(vecs.rows().into_iter().all(|r| r.dot(&r) > 1e-6));
        let (unit, _) = l2_normalize_rows(vecs.view());
        let n = unit.nrows() - 2;
        let negs = unit.slice(ndarray::s![2.., ..]).to_owned();
        let shuffled = negs.select(ndarray::Axis(0), &perm);
        let (l0, g0) = infonce_loss(unit.row(0), unit.row(1), negs.view(), tau).unwrap();
        let (l1, g1) = infonce_loss(unit.row(0), unit.row(1), shuffled.view(), tau).unwrap();
        prop_assert!((l0 - l1).abs() <= 1e-12 * (1.0 + l0.abs()));
        for (a, b) in g0.iter().zip(g1.iter()) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + n as f64 / tau));
        }
    }

    #[test]
    fn uniform_similarities_give_log_of_candidate_count(n in 1usize..300, tau in 0.05f64..3.0) {
        let q = ndarray::array![1.0f64, 0.0, 0.0];
        let k = ndarray::array![0.0f64, 1.0, 0.0];
        let negs = Array2::from_shape_fn((n, 3), |(i, j)| match (i % 2, j) {
            (0, 2) | (1, 1) => 1.0,
            _ => 0.0,
        });
        let (loss, _) = infonce_loss(q.view(), k.view(), negs.view(), tau).unwrap();
        prop_assert!((loss - ((n + 1) as f64).ln()).abs() <= 1e-10);
    }
}
