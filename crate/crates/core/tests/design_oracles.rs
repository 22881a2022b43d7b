mod common;

use coldstart::data::RaterPool;
use coldstart::design::{
    approximation_factor, check_monotone, check_supermodular, check_supermodular_table, expected_mse, objective_value, phi, phi_empty,
    second_moment, steepness, DesignObjective, PhiTable,
};
use coldstart::numerics::default_ridge;
use coldstart::Error;
use common::{naive_trace, random_pool, rel_diff};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn pool_from(cols: &[Vec<f64>]) -> RaterPool {
    let d = cols[0].len();
    let flat: Vec<f64> = cols.iter().flatten().copied().collect();
    RaterPool::from_vectors("item", (0..cols.len()).collect(), DMatrix::from_column_slice(d, cols.len(), &flat)).unwrap()
}

fn users(pool: &RaterPool, positions: &[usize]) -> Vec<usize> {
    positions.iter().map(|&p| pool.users()[p]).collect()
}

#[test]
fn identity_gram_gives_order() {
    let p = pool_from(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
    let v = objective_value(&DesignObjective::a_opt(0.0), &p, &[0, 1, 2]).unwrap();
    assert!((v - 3.0).abs() < 1e-14);
}

#[test]
fn empty_subset_is_ridge_only() {
    let p = random_pool(1, 5, 2);
    let v = objective_value(&DesignObjective::a_opt(0.5), &p, &[]).unwrap();
    assert!((v - 3.0 / 0.5).abs() < 1e-12);
}

#[test]
fn singular_design_without_ridge_is_an_error() {
    let p = random_pool(2, 5, 2);
    let err = objective_value(&DesignObjective::a_opt(0.0), &p, &[0, 1]).unwrap_err();
    assert!(matches!(err, Error::InsufficientDesign));
}

#[test]
fn weighted_and_transductive_need_their_inputs() {
    let p = random_pool(3, 5, 2);
    assert!(matches!(
        objective_value(&DesignObjective::weighted(0.1), &p, &[0, 1, 2]),
        Err(Error::MissingVariances)
    ));
    assert!(matches!(
        expected_mse(&DesignObjective::a_opt(0.1), &p, &[0, 1, 2], &[]),
        Err(Error::MissingNoiseVariance)
    ));
}

#[test]
fn objective_matches_scratch_oracle() {
    for seed in 0..20 {
        let p = random_pool(100 + seed, 9, 2);
        let subset = [1usize, 2, 4, 6, 8];
        let fast = objective_value(&DesignObjective::a_opt(0.0), &p, &subset).unwrap();
        let slow = naive_trace(p.vectors(), &subset, None, 0.0);
        assert!(rel_diff(fast, slow) < 1e-10, "{fast} vs {slow}");
    }
}

#[test]
fn transductive_matches_scratch_oracle() {
    let p = random_pool(7, 10, 3);
    let sigma = second_moment(&random_pool(8, 50, 3).vectors().clone());
    let subset = [0usize, 2, 3, 5, 7, 9];
    let fast = objective_value(&DesignObjective::transductive(0.01, sigma.clone()), &p, &subset).unwrap();
    let m = common::naive_gram(p.vectors(), &subset, None, 0.01);
    let slow = (sigma * common::gauss_jordan_inverse(&m).unwrap()).trace();
    assert!(rel_diff(fast, slow) < 1e-10);
}

#[test]
fn expected_mse_arithmetic() {
    let p = pool_from(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
    let v = expected_mse(&DesignObjective::a_opt(0.0).with_sigma2(1.0), &p, &[0, 1], &[]).unwrap();
    assert!((v - 3.0).abs() < 1e-14);
}

#[test]
fn hetero_formula_reduces_to_iid() {
    let s2 = 0.3;
    let p = random_pool(9, 8, 2).with_variance_values(vec![s2; 8]).unwrap();
    let subset = [0usize, 1, 3, 4, 6];
    let iid = expected_mse(&DesignObjective::a_opt(0.0).with_sigma2(s2), &p, &subset, &[s2; 20]).unwrap();
    let het = expected_mse(&DesignObjective::weighted(0.0), &p, &subset, &[s2; 20]).unwrap();
    assert!(rel_diff(iid, het) < 1e-12);
}

#[test]
fn iid_expected_mse_is_affine_in_objective() {
    let p = random_pool(10, 10, 3);
    let s2 = 0.7;
    for subset in [vec![0usize, 1, 2, 3], vec![0, 2, 4, 6, 8], (0..10).collect()] {
        let obj = objective_value(&DesignObjective::a_opt(0.0), &p, &subset).unwrap();
        let mse = expected_mse(&DesignObjective::a_opt(0.0).with_sigma2(s2), &p, &subset, &[]).unwrap();
        assert!(rel_diff(mse, s2 * obj + s2) < 1e-13);
    }
}

#[test]
fn phi_vanishes_on_full_pool_and_is_positive_elsewhere() {
    let p = random_pool(11, 7, 2);
    let ridge = default_ridge(3);
    let all: Vec<usize> = (0..7).collect();
    assert_eq!(phi(&p, &all, ridge).unwrap(), 0.0);
    assert!(phi(&p, &[0, 1, 2, 3, 4, 5], ridge).unwrap() > 0.0);
    assert!(phi(&p, &[3], ridge).unwrap() > 0.0);
}

/// Independent Phi(empty): for every ordered pair of disjoint nonempty sets.
fn phi_empty_oracle(p: &RaterPool, ridge: f64) -> f64 {
    let n = p.len();
    let full: Vec<usize> = (0..n).collect();
    let f_full = naive_trace(p.vectors(), &full, None, ridge);
    let f = |mask: u32| {
        let cols: Vec<usize> = (0..n).filter(|b| mask >> b & 1 == 1).collect();
        naive_trace(p.vectors(), &cols, None, ridge) - f_full
    };
    let mut best = f64::NEG_INFINITY;
    for a in 1u32..1 << n {
        for b in 1u32..1 << n {
            if a & b == 0 {
                best = best.max(f(a) + f(b) - f(a | b));
            }
        }
    }
    best
}

#[test]
fn phi_empty_matches_exhaustive_pairs() {
    for seed in 0..3 {
        let p = random_pool(200 + seed, 6, 1);
        let ridge = default_ridge(2);
        let (fast, exact) = phi_empty(&DesignObjective::a_opt(ridge), &p).unwrap();
        assert!(exact);
        let slow = phi_empty_oracle(&p, ridge);
        assert!(rel_diff(fast, slow) < 1e-9, "{fast} vs {slow}");
    }
}

#[test]
fn large_pool_phi_empty_is_a_flagged_lower_bound() {
    let p = random_pool(12, 14, 2);
    let (v, exact) = phi_empty(&DesignObjective::a_opt(default_ridge(3)), &p).unwrap();
    assert!(!exact);
    assert!(v > 0.0);
    let s = steepness(&p, default_ridge(3)).unwrap();
    assert!(!s.phi_empty_exact);
}

/// The displayed steepness formula evaluated directly on a tabulated Phi.
fn steepness_oracle(p: &RaterPool, ridge: f64) -> (f64, usize) {
    let table = PhiTable::new(&DesignObjective::a_opt(ridge), p).unwrap();
    let n = p.len();
    let full = (1u64 << n) - 1;
    let e = table.phi_empty();
    let mut best = (f64::NEG_INFINITY, 0);
    for x in 0..n {
        let fx = table.get(1 << x);
        let s = ((e - fx) - (table.get(full & !(1 << x)) - 0.0)) / (e - fx);
        if s > best.0 {
            best = (s, x);
        }
    }
    best
}

#[test]
fn steepness_matches_direct_formula() {
    for seed in 0..5 {
        let p = random_pool(300 + seed, 7, 2);
        let ridge = 0.05;
        let s = steepness(&p, ridge).unwrap();
        let (s_oracle, x) = steepness_oracle(&p, ridge);
        assert!((s.s - s_oracle).abs() < 1e-12);
        assert_eq!(s.argmax_user, p.users()[x]);
        assert!(s.t >= 0.0);
        assert!(s.factor >= 1.0);
    }
}

#[test]
fn steepness_of_orthogonal_scaled_users() {
    // k+1 orthogonal users with equal norms; Phi is separable across users
    let c = 2.0;
    let p = pool_from(&[vec![c, 0.0, 0.0], vec![0.0, c, 0.0], vec![0.0, 0.0, c]]);
    let ridge = 0.1;
    let s = steepness(&p, ridge).unwrap();
    let (s_oracle, _) = steepness_oracle(&p, ridge);
    assert!((s.s - s_oracle).abs() < 1e-12);
}

#[test]
fn identical_users_have_bounded_steepness() {
    let p = pool_from(&vec![vec![1.0, 0.5]; 6]);
    let s = steepness(&p, default_ridge(2)).unwrap();
    let (s_oracle, _) = steepness_oracle(&p, default_ridge(2));
    assert!((s.s - s_oracle).abs() < 1e-12);
    assert!((0.0..=1.0).contains(&s.s));
}

#[test]
fn steepness_needs_two_users() {
    let p = pool_from(&[vec![1.0, 0.5]]);
    assert!(matches!(steepness(&p, 0.1), Err(Error::DegeneratePool(_))));
}

#[test]
fn factor_is_at_least_one() {
    for t in [0.0, 1e-9, 0.5, 3.0, 50.0, f64::INFINITY] {
        assert!(approximation_factor(t) >= 1.0);
    }
}

#[test]
fn checker_self_tests() {
    let modular: Vec<f64> = (0..1u32 << 5).map(|m| -(m.count_ones() as f64)).collect();
    assert!(check_supermodular_table(5, &modular).holds());
    let concave: Vec<f64> = (0..1u32 << 4).map(|m| (m.count_ones() as f64).sqrt()).collect();
    assert!(check_supermodular_table(4, &concave).violations > 0);
    let convex: Vec<f64> = (0..1u32 << 4).map(|m| (m.count_ones() as f64).powi(2)).collect();
    assert!(check_supermodular_table(4, &convex).holds());
}

#[test]
fn supermodularity_sampling_on_large_pools() {
    let p = random_pool(13, 14, 2);
    let r = check_supermodular(&p, default_ridge(3), 5).unwrap();
    assert!(!r.exhaustive);
    assert_eq!(r.triples_checked, 10_000);
    let again = check_supermodular(&p, default_ridge(3), 5).unwrap();
    assert_eq!(r, again);
}

#[test]
fn phi_is_monotone_on_small_pools() {
    for seed in 0..10 {
        let p = random_pool(400 + seed, 8, 2);
        let m = check_monotone(&DesignObjective::a_opt(default_ridge(3)), &p).unwrap();
        assert!(m.holds(), "seed {seed}: {m:?}");
    }
}

#[test]
fn known_supermodularity_counterexample() {
    // exact values: f(A)=65/9, f(A+x)=247/36, f(B)=111/142, f(B+x)=413/1110
    let cols = [
        [1.0, 0.0, -2.0],
        [1.0, 0.0, -1.0],
        [1.0, 2.0, 3.0],
        [1.0, 3.0, -1.0],
        [1.0, -3.0, -2.0],
        [1.0, -2.0, 2.0],
        [1.0, 2.0, -2.0],
        [1.0, 3.0, -1.0],
    ];
    let p = pool_from(&cols.iter().map(|c| c.to_vec()).collect::<Vec<_>>());
    let f = |s: &[usize]| objective_value(&DesignObjective::a_opt(0.0), &p, &users(&p, s)).unwrap();
    assert!((f(&[0, 1, 3]) - 65.0 / 9.0).abs() < 1e-12);
    assert!((f(&[0, 1, 3, 4]) - 247.0 / 36.0).abs() < 1e-12);
    assert!((f(&[0, 1, 2, 3, 6]) - 111.0 / 142.0).abs() < 1e-12);
    assert!((f(&[0, 1, 2, 3, 4, 6]) - 413.0 / 1110.0).abs() < 1e-12);
    let gain_a = f(&[0, 1, 3, 4]) - f(&[0, 1, 3]);
    let gain_b = f(&[0, 1, 2, 3, 4, 6]) - f(&[0, 1, 2, 3, 6]);
    assert!(gain_a > gain_b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn objective_is_monotone_decreasing(seed in any::<u64>(), n in 3usize..12, ridge in 1e-4f64..1.0) {
        let p = random_pool(seed, n, 2);
        let obj = DesignObjective::a_opt(ridge);
        let mut subset: Vec<usize> = Vec::new();
        let mut last = objective_value(&obj, &p, &subset).unwrap();
        for u in 0..n {
            subset.push(u);
            let v = objective_value(&obj, &p, &subset).unwrap();
            prop_assert!(v <= last * (1.0 + 1e-12));
            last = v;
        }
    }

    #[test]
    fn scaling_users_scales_objective(seed in any::<u64>(), c in 0.1f64..10.0) {
        let p = random_pool(seed, 8, 2);
        let scaled = RaterPool::from_vectors("item", (0..8).collect(), p.vectors() * c).unwrap();
        let subset = [0usize, 2, 3, 5, 7];
        let a = objective_value(&DesignObjective::a_opt(0.0), &p, &subset).unwrap();
        let b = objective_value(&DesignObjective::a_opt(0.0), &scaled, &subset).unwrap();
        prop_assert!(rel_diff(b, a / (c * c)) < 1e-9);
        let opt_a = coldstart::selection::brute_force_optimal(&p, 4, &DesignObjective::a_opt(0.0)).unwrap().selected;
        let opt_b = coldstart::selection::brute_force_optimal(&scaled, 4, &DesignObjective::a_opt(0.0)).unwrap().selected;
        prop_assert_eq!(opt_a, opt_b);
    }
}
