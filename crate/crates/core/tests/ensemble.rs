mod common;

use l3ens_core::bench::sts_like;
use l3ens_core::data::{TaskKind, Targets};
use l3ens_core::embedding::LabeledSet;
use l3ens_core::ensemble::{
    build_fused_representation, combine_predictions, fit_weights, fuse_sets, naive_combine, score_combined,
    train_fusion_ensemble, weighted_combine, WeightConstraint,
};
use l3ens_core::heads::{score, softmax, train_head, Head, HeadKind, TrainConfig};
use proptest::prelude::*;

fn distribution(width: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-4.0f64..4.0, width).prop_map(|z| softmax(&z))
}

fn simplex_weights(m: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, m).prop_map(|mut w| {
        let s: f64 = w.iter().sum::<f64>() + 1e-12;
        w.iter_mut().for_each(|x| *x /= s);
        w
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn naive_is_order_invariant(members in prop::collection::vec(distribution(3), 1..6), rot in 0usize..6) {
        let mut rotated = members.clone();
        rotated.rotate_left(rot % members.len());
        let a = naive_combine(&members, TaskKind::Classification).unwrap();
        let b = naive_combine(&rotated, TaskKind::Classification).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        let u = vec![1.0 / members.len() as f64; members.len()];
        let c = weighted_combine(&rotated, &u, TaskKind::Classification).unwrap();
        for (x, y) in a.iter().zip(&c) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn weighted_stays_in_hull_and_simplex(
        (members, w) in (1usize..6).prop_flat_map(|m| (prop::collection::vec(distribution(4), m), simplex_weights(m)))
    ) {
        let out = weighted_combine(&members, &w, TaskKind::Classification).unwrap();
        prop_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        for (k, o) in out.iter().enumerate() {
            let lo = members.iter().map(|m| m[k]).fold(f64::INFINITY, f64::min);
            let hi = members.iter().map(|m| m[k]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(*o >= 0.0);
            // Renormalization may move a coordinate by rounding only.
            prop_assert!(*o >= lo - 1e-9 && *o <= hi + 1e-9, "{o} outside [{lo}, {hi}]");
        }
    }

    #[test]
    fn fusion_ignores_positive_scale(
        a in prop::collection::vec(-1.0f64..1.0, 5),
        b in prop::collection::vec(-1.0f64..1.0, 3),
        extra in prop::collection::vec(-1.0f64..1.0, 4),
        scale in 0.01f64..100.0,
    ) {
        let base = build_fused_representation(&[a.clone(), b.clone()], Some(&extra));
        let scaled_a: Vec<f64> = a.iter().map(|x| x * scale).collect();
        let scaled_e: Vec<f64> = extra.iter().map(|x| x * scale).collect();
        let moved = build_fused_representation(&[scaled_a, b], Some(&scaled_e));
        prop_assert_eq!(base.values.len(), 12);
        for (x, y) in base.values.iter().zip(&moved.values) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn simplex_fit_dominates_members(
        seed in 0u64..10_000,
        m in 1usize..5,
        n in 3usize..40,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let preds: Vec<Vec<Vec<f64>>> = (0..m)
            .map(|_| {
                let bias = rng.random_range(-0.3..0.3);
                let noise = rng.random_range(0.0..0.5);
                y.iter().map(|t| vec![(t + bias + noise * (rng.random::<f64>() - 0.5)).clamp(0.0, 1.0)]).collect()
            })
            .collect();
        let targets = Targets::Values(y);
        let fit = fit_weights(&preds, &targets, WeightConstraint::Simplex).unwrap();
        prop_assert!((fit.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(fit.weights.iter().all(|w| *w >= 0.0));
        let ensemble = score_combined(&preds, Some(&fit.weights), &targets).unwrap().value;
        for p in &preds {
            prop_assert!(ensemble <= score(p, &targets).value + 1e-6);
        }
    }

    #[test]
    fn classification_outputs_are_distributions(
        (members, w) in (1usize..5).prop_flat_map(|m| (prop::collection::vec(prop::collection::vec(distribution(3), 6), m), simplex_weights(m)))
    ) {
        for weights in [None, Some(w.as_slice())] {
            for row in combine_predictions(&members, weights, TaskKind::Classification).unwrap() {
                prop_assert!(row.iter().all(|p| *p >= 0.0));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn single_member_strategies_are_identity() {
    let task = common::hash_task(&sts_like(3, 200), 16, 9);
    let head = Head::init(HeadKind::Linear, 16, 1, TaskKind::Regression, 4).unwrap();
    let (head, _) = train_head(head, &task.train, &task.validation, &TrainConfig::default()).unwrap();
    let val = head.predict_set(&task.validation).unwrap();
    let test = head.predict_set(&task.test).unwrap();
    let solo = head.evaluate(&task.test).unwrap();
    assert_eq!(score_combined(std::slice::from_ref(&test), None, &task.test.targets).unwrap(), solo);
    let fit = fit_weights(&[val], &task.validation.targets, WeightConstraint::Simplex).unwrap();
    assert_eq!(fit.weights, vec![1.0]);
    assert_eq!(combine_predictions(std::slice::from_ref(&test), Some(&fit.weights), TaskKind::Regression).unwrap(), test);
}

#[test]
fn single_member_fusion_matches_plain_training() {
    // Hash rows are unit-norm, so single-segment fusion leaves them unchanged
    // up to rounding and training from the same seed gives the same head.
    let task = common::hash_task(&sts_like(4, 200), 16, 2);
    let cfg = TrainConfig::default().with_seed(21);
    let fused = |s: &LabeledSet| fuse_sets(&[s], None).unwrap().set;
    let out = train_fusion_ensemble(
        HeadKind::Linear,
        TaskKind::Regression,
        1,
        &fused(&task.train),
        &fused(&task.validation),
        &fused(&task.test),
        &cfg,
    )
    .unwrap();
    let head = Head::init(HeadKind::Linear, 16, 1, TaskKind::Regression, 21).unwrap();
    let (plain, _) = train_head(head, &task.train, &task.validation, &cfg).unwrap();
    let plain_mse = plain.evaluate(&task.test).unwrap().value;
    assert!((out.test_metric.value - plain_mse).abs() < 1e-6, "{} vs {plain_mse}", out.test_metric.value);
}

#[test]
fn duplicate_auxiliary_adds_nothing() {
    // Auxiliary channel equal to member 1: fused inputs carry no new
    // information, so test MSE stays within 0.02 of the members-only fusion.
    for seed in 0..3 {
        let ds = sts_like(seed, 600);
        let a = common::hash_task(&ds, 32, 50 + seed);
        let b = common::hash_task(&ds, 32, 80 + seed);
        let cfg = TrainConfig::default().with_seed(seed);
        let run = |with_aux: bool| {
            let fuse = |x: &LabeledSet, y: &LabeledSet| {
                let aux: Vec<Vec<f64>> = (0..x.len()).map(|i| x.row(i).to_vec()).collect();
                fuse_sets(&[x, y], with_aux.then_some(aux.as_slice())).unwrap().set
            };
            train_fusion_ensemble(
                HeadKind::Linear,
                TaskKind::Regression,
                1,
                &fuse(&a.train, &b.train),
                &fuse(&a.validation, &b.validation),
                &fuse(&a.test, &b.test),
                &cfg,
            )
            .unwrap()
            .test_metric
            .value
        };
        let (with, without) = (run(true), run(false));
        assert!((with - without).abs() < 0.02, "seed {seed}: {with} vs {without}");
    }
}

#[test]
fn knowledge_fusion_beats_members_on_planted_signal() {
    let (members, ki) = common::ki_direction(7);
    assert!(members.iter().all(|m| ki < *m), "{ki} vs {members:?}");

    // Oracle: least squares on the normalized knowledge vector alone fits the
    // planted label exactly, so the signal is linear in that segment.
    let kb = l3ens_core::bench::toy_kb(7);
    let ds = l3ens_core::bench::planted_knowledge(7, 300, &kb);
    let rows: Vec<Vec<f64>> = ds
        .examples()
        .iter()
        .map(|e| {
            let k = kb.knowledge_vector(&kb.link_entities(&e.text.joined())).unwrap();
            let mut r = build_fused_representation::<Vec<f64>>(&[], Some(&k)).values;
            r.push(1.0);
            r
        })
        .collect();
    let x = nalgebra::DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j]);
    let y = nalgebra::DVector::from_iterator(rows.len(), ds.examples().iter().map(|e| e.label));
    let w = (x.transpose() * &x).cholesky().unwrap().solve(&(x.transpose() * &y));
    let residual = (&x * w - y).norm_squared() / rows.len() as f64;
    assert!(residual < 1e-20, "{residual}");
}

#[test]
fn naive_beats_worse_member_on_sts_like() {
    let (members, naive) = common::sts_direction(11);
    let worse = members.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!(naive < worse, "{naive} vs {members:?}");
}

#[test]
fn degenerate_members_get_uniform_weights() {
    let p: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 / 5.0]).collect();
    let fit = fit_weights(&[p.clone(), p.clone(), p], &Targets::Values(vec![0.1; 5]), WeightConstraint::Simplex).unwrap();
    assert!(fit.degenerate);
    assert_eq!(fit.weights, vec![1.0 / 3.0; 3]);
}
