use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use specbias::decode::{linear_decodability, ridge_fit, CVConfig};
use specbias::{EmbeddingSet, Error};

fn random_design(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((n, d), |_| r.random_range(-1.0..1.0))
}

fn emb(x: &Array2<f64>) -> EmbeddingSet {
    EmbeddingSet::from_f64(x, "test", "0".into()).unwrap()
}

/// Targets that depend linearly on the first three (f32-rounded) columns plus noise.
fn linear_targets(x: &Array2<f64>, seed: u64) -> Vec<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    x.rows()
        .into_iter()
        .map(|row| {
            let v = |j: usize| f64::from(row[j] as f32);
            2.0 * v(0) - v(1) + 0.5 * v(2) + 0.3 * r.random_range(-1.0..1.0)
        })
        .collect()
}

/// Ordinary least squares with an intercept via the normal equations.
fn ols_predict(x: &Array2<f64>, y: &[f64]) -> Vec<f64> {
    let (n, d) = x.dim();
    let a = DMatrix::from_fn(n, d + 1, |i, j| if j == 0 { 1.0 } else { x[[i, j - 1]] });
    let b = DVector::from_column_slice(y);
    let beta = (a.transpose() * &a).lu().solve(&(a.transpose() * b)).unwrap();
    (a * beta).iter().copied().collect()
}

#[test]
fn consistent_system_is_recovered() {
    let x = random_design(60, 4, 1);
    let w = [1.5, -2.0, 0.25, 3.0];
    let y: Array1<f64> =
        x.rows().into_iter().map(|r| 0.7 + r.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()).collect();
    let fit = ridge_fit(x.view(), y.view(), 1e-6).unwrap();
    for (got, want) in fit.weights.iter().zip(&w) {
        assert!((got - want).abs() / want.abs() < 1e-4, "{got} vs {want}");
    }
}

#[test]
fn huge_penalty_shrinks_to_the_mean() {
    let x = random_design(40, 3, 2);
    let y: Array1<f64> = (0..40).map(|i| i as f64 * 0.1).collect();
    let fit = ridge_fit(x.view(), y.view(), 1e9).unwrap();
    assert!(fit.weights.iter().all(|w| w.abs() < 1e-6));
    assert!((fit.intercept - y.mean().unwrap()).abs() < 1e-6);
}

#[test]
fn column_rescaling_matches_ols_at_tiny_lambda() {
    let x = random_design(80, 5, 3);
    let y = linear_targets(&x, 4);
    let ya = Array1::from(y.clone());
    let scales = [1.0, 10.0, 0.1, 3.0, 250.0];
    let xs = Array2::from_shape_fn(x.dim(), |(i, j)| x[[i, j]] * scales[j]);
    let p1 = ridge_fit(x.view(), ya.view(), 1e-8).unwrap().predict(x.view());
    let p2 = ridge_fit(xs.view(), ya.view(), 1e-8).unwrap().predict(xs.view());
    let oracle = ols_predict(&x, &y);
    for i in 0..80 {
        assert!((p1[i] - oracle[i]).abs() < 1e-6, "row {i}");
        assert!((p2[i] - oracle[i]).abs() < 1e-6, "row {i}: {}", p2[i] - oracle[i]);
    }
}

#[test]
fn rescaled_columns_give_identical_cv_predictions() {
    let x = random_design(100, 4, 5);
    let y = linear_targets(&x, 6);
    let scales = [4.0, 0.5, 2.0, 8.0];
    let xs = Array2::from_shape_fn(x.dim(), |(i, j)| x[[i, j]] * scales[j]);
    let cv = CVConfig { lambda_grid: vec![1e-8], standardize: false, ..Default::default() };
    let a = linear_decodability(&emb(&x), &y, &cv, "y").unwrap();
    let b = linear_decodability(&emb(&xs), &y, &cv, "y").unwrap();
    for (u, v) in a.predictions.iter().zip(&b.predictions) {
        assert!((u - v).abs() < 1e-6);
    }
}

#[test]
fn noise_targets_are_not_decodable() {
    let x = random_design(1000, 32, 7);
    let mut r = ChaCha8Rng::seed_from_u64(8);
    let y: Vec<f64> = (0..1000).map(|_| r.random::<f64>()).collect();
    let rep = linear_decodability(&emb(&x), &y, &CVConfig::default(), "noise").unwrap();
    assert!(rep.r2_pooled < 0.05, "{}", rep.r2_pooled);
}

#[test]
fn a_feature_as_target_is_decodable() {
    let x = random_design(300, 8, 9);
    let e = emb(&x);
    let y: Vec<f64> = e.data.column(0).iter().map(|&v| f64::from(v)).collect();
    let rep = linear_decodability(&e, &y, &CVConfig::default(), "col0").unwrap();
    assert!(rep.r2_pooled >= 0.999, "{}", rep.r2_pooled);
}

#[test]
fn constant_targets_are_undefined() {
    let x = random_design(50, 3, 10);
    match linear_decodability(&emb(&x), &[1.0; 50], &CVConfig::default(), "c") {
        Err(Error::Undefined(msg)) => assert!(msg.contains("R^2")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn outer_folds_partition_the_samples() {
    let x = random_design(103, 3, 11);
    let y = linear_targets(&x, 12);
    let rep = linear_decodability(&emb(&x), &y, &CVConfig::default(), "y").unwrap();
    assert_eq!(rep.fold_of.len(), 103);
    let mut sizes = [0usize; 5];
    rep.fold_of.iter().for_each(|&k| sizes[k] += 1);
    assert_eq!(sizes.iter().sum::<usize>(), 103);
    assert!(sizes.iter().all(|&s| s == 20 || s == 21), "{sizes:?}");
    assert_eq!(rep.targets, y);
}

#[test]
fn permuting_held_out_targets_does_not_leak() {
    let x = random_design(120, 6, 13);
    let y = linear_targets(&x, 14);
    let cv = CVConfig::default();
    let base = linear_decodability(&emb(&x), &y, &cv, "y").unwrap();
    for fold in 0..cv.outer_folds {
        let idx: Vec<usize> = (0..120).filter(|&i| base.fold_of[i] == fold).collect();
        let mut y2 = y.clone();
        // Reverse the held-out targets of this fold only.
        for (a, b) in idx.iter().zip(idx.iter().rev()) {
            y2[*a] = y[*b];
        }
        let rep = linear_decodability(&emb(&x), &y2, &cv, "y").unwrap();
        assert_eq!(rep.chosen_lambdas[fold], base.chosen_lambdas[fold]);
        for &i in &idx {
            assert_eq!(rep.predictions[i].to_bits(), base.predictions[i].to_bits());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn r2_is_invariant_to_affine_targets(
        seed in 0u64..1000,
        a in prop_oneof![-50.0f64..-0.01, 0.01f64..50.0],
        b in -100.0f64..100.0,
    ) {
        let x = random_design(60, 4, seed);
        let y = linear_targets(&x, seed + 1);
        let ya: Vec<f64> = y.iter().map(|v| a * v + b).collect();
        let cv = CVConfig::default();
        let r1 = linear_decodability(&emb(&x), &y, &cv, "y").unwrap().r2_pooled;
        let r2 = linear_decodability(&emb(&x), &ya, &cv, "y").unwrap().r2_pooled;
        prop_assert!((r1 - r2).abs() < 1e-10, "{} vs {}", r1, r2);
    }
}
