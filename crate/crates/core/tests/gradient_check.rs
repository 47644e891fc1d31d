mod common;

use common::{finite_difference_gradient, random_instance, relative_error};
use l3ens_core::data::{TaskKind, Targets};
use l3ens_core::embedding::LabeledSet;
use l3ens_core::heads::{Head, HeadKind};
use proptest::prelude::*;

const FD_STEP: f64 = 1e-4;
const TOLERANCE: f64 = 1e-4;

fn max_error(head: &Head, set: &LabeledSet, l2: f64) -> f64 {
    let batch: Vec<usize> = (0..set.len()).collect();
    let analytic = head.gradient(set, &batch, l2).unwrap();
    let numeric = finite_difference_gradient(head, set, &batch, l2, FD_STEP);
    analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(*a, *n))
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn linear_regression_matches_fd(seed in any::<u64>()) {
        let (h, s, l2) = random_instance(seed, HeadKind::Linear, TaskKind::Regression);
        prop_assert!(max_error(&h, &s, l2) < TOLERANCE);
    }

    #[test]
    fn linear_classification_matches_fd(seed in any::<u64>()) {
        let (h, s, l2) = random_instance(seed, HeadKind::Linear, TaskKind::Classification);
        prop_assert!(max_error(&h, &s, l2) < TOLERANCE);
    }

    #[test]
    fn mlp_regression_matches_fd(seed in any::<u64>()) {
        let (h, s, l2) = random_instance(seed, HeadKind::Mlp1 { hidden: 1 }, TaskKind::Regression);
        prop_assert!(max_error(&h, &s, l2) < TOLERANCE);
    }

    #[test]
    fn mlp_classification_matches_fd(seed in any::<u64>()) {
        let (h, s, l2) = random_instance(seed, HeadKind::Mlp1 { hidden: 1 }, TaskKind::Classification);
        prop_assert!(max_error(&h, &s, l2) < TOLERANCE);
    }

    #[test]
    fn softmax_is_a_distribution(seed in any::<u64>()) {
        let (h, s, _) = random_instance(seed, HeadKind::Mlp1 { hidden: 1 }, TaskKind::Classification);
        for i in 0..s.len() {
            let p = h.forward(s.row(i)).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(p.iter().all(|&v| v > 0.0));
        }
    }
}

#[test]
fn gradient_vanishes_at_exact_least_squares_fit() {
    // y = 0.3·x0 − 0.2·x1 + 0.4 holds exactly, so these parameters are the minimum.
    let xs = [[0.1, 0.5], [0.9, -0.3], [-0.4, 0.2], [0.6, 0.6], [0.0, -0.8]];
    let ys: Vec<f64> = xs.iter().map(|x| 0.3 * x[0] - 0.2 * x[1] + 0.4).collect();
    let set = LabeledSet {
        ids: (0..xs.len()).map(|i| i.to_string()).collect(),
        dim: 2,
        features: xs.iter().flatten().copied().collect(),
        targets: Targets::Values(ys),
    };
    let mut head = Head::init(HeadKind::Linear, 2, 1, TaskKind::Regression, 0).unwrap();
    head.params_mut().copy_from_slice(&[0.3, -0.2, 0.4]);
    let batch: Vec<usize> = (0..xs.len()).collect();
    let g = head.gradient(&set, &batch, 0.0).unwrap();
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm < 1e-8, "gradient norm {norm}");
}

#[test]
fn doubling_residuals_doubles_output_gradient() {
    for (kind, seed) in [(HeadKind::Linear, 5), (HeadKind::Mlp1 { hidden: 4 }, 6)] {
        let (head, set, _) = random_instance(seed, kind, TaskKind::Regression);
        let batch: Vec<usize> = (0..set.len()).collect();
        // y' = 2y − p makes every residual p − y' twice as large.
        let Targets::Values(ys) = &set.targets else { unreachable!() };
        let doubled_targets: Vec<f64> = ys
            .iter()
            .enumerate()
            .map(|(i, y)| 2.0 * y - head.forward(set.row(i)).unwrap()[0])
            .collect();
        let doubled = LabeledSet {
            targets: Targets::Values(doubled_targets),
            ..set.clone()
        };
        let g1 = head.gradient(&set, &batch, 0.0).unwrap();
        let g2 = head.gradient(&doubled, &batch, 0.0).unwrap();
        let n1 = finite_difference_gradient(&head, &set, &batch, 0.0, FD_STEP);
        let n2 = finite_difference_gradient(&head, &doubled, &batch, 0.0, FD_STEP);
        // Output layer is the trailing block: W2 and b2 (or W and b for linear).
        let out_block = match kind {
            HeadKind::Linear => 0..head.param_count(),
            HeadKind::Mlp1 { .. } => head.trunk_len()..head.param_count(),
        };
        for j in out_block {
            assert!(relative_error(g2[j], 2.0 * g1[j]) < 1e-9, "analytic coordinate {j}");
            assert!(relative_error(n2[j], 2.0 * n1[j]) < TOLERANCE, "fd coordinate {j}");
        }
    }
}
