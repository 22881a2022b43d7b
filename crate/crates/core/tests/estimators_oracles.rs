mod common;

use coldstart::estimators::{estimate, gls_estimate, least_squares_estimate, similarity_estimate, EstimatorKind, RevealedRatings};
use coldstart::Error;
use common::{random_vectors, rng};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};

fn revealed(v: &DMatrix<f64>, t: &[f64], variances: Option<Vec<f64>>) -> RevealedRatings {
    RevealedRatings::new((0..v.ncols()).collect(), t.to_vec(), v.clone(), variances).unwrap()
}

/// Normal equations solved by LU, independent of the Cholesky path.
fn lu_solution(v: &DMatrix<f64>, t: &[f64], w: &[f64], ridge: f64) -> DVector<f64> {
    let d = v.nrows();
    let wm = DMatrix::from_diagonal(&DVector::from_column_slice(w));
    let lhs = v * &wm * v.transpose() + DMatrix::identity(d, d) * ridge;
    let rhs = v * &wm * DVector::from_column_slice(t);
    lhs.lu().solve(&rhs).unwrap()
}

#[test]
fn least_squares_matches_lu_oracle() {
    let mut r = rng(1);
    for ridge in [0.0, 1e-6, 0.1, 2.0] {
        let v = random_vectors(&mut r, 15, 3);
        let t: Vec<f64> = (0..15).map(|_| StandardNormal.sample(&mut r)).collect();
        let e = least_squares_estimate(&revealed(&v, &t, None), ridge).unwrap();
        let oracle = lu_solution(&v, &t, &[1.0; 15], ridge);
        assert!((e.parameters() - oracle).amax() < 1e-10);
        assert_eq!(e.method, EstimatorKind::LeastSquares);
    }
}

#[test]
fn gls_matches_weighted_lu_oracle() {
    let mut r = rng(2);
    let v = random_vectors(&mut r, 12, 2);
    let t: Vec<f64> = (0..12).map(|_| StandardNormal.sample(&mut r)).collect();
    let var: Vec<f64> = (0..12).map(|i| 0.05 + i as f64 * 0.1).collect();
    let w: Vec<f64> = var.iter().map(|s| 1.0 / s).collect();
    for ridge in [0.0, 0.3] {
        let e = gls_estimate(&revealed(&v, &t, Some(var.clone())), ridge).unwrap();
        assert!((e.parameters() - lu_solution(&v, &t, &w, ridge)).amax() < 1e-10);
    }
}

#[test]
fn gls_needs_variances() {
    let v = random_vectors(&mut rng(3), 5, 1);
    assert!(matches!(gls_estimate(&revealed(&v, &[0.0; 5], None), 0.0), Err(Error::MissingVariances)));
}

#[test]
fn too_few_raters_without_ridge_is_insufficient() {
    let v = random_vectors(&mut rng(4), 2, 3);
    let err = least_squares_estimate(&revealed(&v, &[1.0, 2.0], None), 0.0).unwrap_err();
    assert!(matches!(err, Error::InsufficientDesign));
    assert!(least_squares_estimate(&revealed(&v, &[1.0, 2.0], None), 0.1).is_ok());
}

#[test]
fn similarity_matches_hand_computation() {
    let v = DMatrix::from_column_slice(3, 4, &[1.0, 0.5, -1.0, 1.0, 2.0, 0.0, 1.0, -1.0, 1.0, 1.0, 0.0, 3.0]);
    let t = [0.2, -0.4, 0.6, 1.0];
    let raw = [4.0, 2.0, 5.0, 3.9];
    let e = similarity_estimate(&revealed(&v, &t, None), &raw, 4.0).unwrap();
    assert!((e.bias - 0.35).abs() < 1e-15);
    assert!((e.factors[0] - (0.5 - 1.0) / 2.0).abs() < 1e-15);
    assert!((e.factors[1] - (-1.0 + 1.0) / 2.0).abs() < 1e-15);
    let none = similarity_estimate(&revealed(&v, &t, None), &raw, 6.0).unwrap();
    assert_eq!(none.factors, DVector::zeros(2));
}

#[test]
fn dispatch_reaches_each_estimator() {
    let mut r = rng(5);
    let v = random_vectors(&mut r, 10, 2);
    let t: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
    let rv = revealed(&v, &t, Some(vec![0.5; 10]));
    let raw = vec![4.5; 10];
    for kind in [EstimatorKind::LeastSquares, EstimatorKind::Gls, EstimatorKind::Similarity] {
        assert_eq!(estimate(kind, &rv, &raw, 0.01, 4.0).unwrap().method, kind);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn noiseless_ratings_are_recovered(seed in any::<u64>(), k in 1usize..6, extra in 0usize..20) {
        let mut r = rng(seed);
        let v = random_vectors(&mut r, k + 1 + extra, k);
        let theta = DVector::from_fn(k + 1, |_, _| StandardNormal.sample(&mut r));
        let t: Vec<f64> = (v.transpose() * &theta).iter().copied().collect();
        let e = least_squares_estimate(&revealed(&v, &t, None), 0.0);
        if let Ok(e) = e {
            prop_assert!((e.parameters() - &theta).amax() < 1e-6 * theta.amax().max(1.0));
        }
        let g = gls_estimate(&revealed(&v, &t, Some(vec![0.3; v.ncols()])), 0.0);
        if let Ok(g) = g {
            prop_assert!((g.parameters() - theta).amax() < 1e-6);
        }
    }

    #[test]
    fn equal_variances_make_gls_least_squares(seed in any::<u64>(), s2 in 0.01f64..10.0) {
        let mut r = rng(seed);
        let v = random_vectors(&mut r, 12, 3);
        let t: Vec<f64> = (0..12).map(|_| StandardNormal.sample(&mut r)).collect();
        let ls = least_squares_estimate(&revealed(&v, &t, None), 0.0).unwrap();
        let gls = gls_estimate(&revealed(&v, &t, Some(vec![s2; 12])), 0.0).unwrap();
        prop_assert!((ls.parameters() - gls.parameters()).amax() < 1e-8);
    }
}
