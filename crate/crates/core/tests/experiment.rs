use std::io::Write as _;

use coldstart::data::Scale;
use coldstart::estimators::EstimatorKind;
use coldstart::experiment::{
    evaluate_rmse, generate_synthetic, load_sweep_config, monte_carlo_expected_mse, run_sweep, write_csv, CsvPrecision, MethodSpec,
    MonteCarloSpec, NoiseModel, SweepConfig, SweepInput, SweepOptions, SyntheticConfig,
};
use coldstart::lfm::UserVariances;
use coldstart::selection::SelectionMethod;
use proptest::prelude::*;

fn synth(sigma: f64, seed: u64) -> SyntheticConfig {
    SyntheticConfig {
        n_users: 300,
        n_items: 40,
        k: 3,
        raters_per_item: 60,
        noise: NoiseModel::Iid { sigma },
        seed,
        ..Default::default()
    }
}

#[test]
fn vanishing_noise_reproduces_predictions() {
    let data = generate_synthetic(&synth(1e-9, 1)).unwrap();
    for r in data.dataset.ratings() {
        let u = data.truth.users().get(data.dataset.users().id(r.user)).unwrap();
        let i = data.truth.items().get(data.dataset.items().id(r.item)).unwrap();
        assert!((r.value - data.truth.predict(u, i).unwrap()).abs() < 1e-7);
    }
}

#[test]
fn isotropic_population_has_scaled_identity_gram() {
    let cfg = SyntheticConfig { isotropic: true, ..synth(0.5, 2) };
    let data = generate_synthetic(&cfg).unwrap();
    let p = data.truth.augmented_users();
    let g = &p * p.transpose();
    let n = cfg.n_users as f64;
    assert!((g - nalgebra::DMatrix::identity(4, 4) * n).amax() < 1e-8 * n);
}

#[test]
fn generated_noise_has_requested_variance() {
    let sigma = 0.7;
    let cfg = SyntheticConfig { n_users: 1000, n_items: 100, raters_per_item: 1000, ..synth(sigma, 3) };
    let data = generate_synthetic(&cfg).unwrap();
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for r in data.dataset.ratings() {
        let u = data.truth.users().get(data.dataset.users().id(r.user)).unwrap();
        let i = data.truth.items().get(data.dataset.items().id(r.item)).unwrap();
        let e = r.value - data.truth.predict(u, i).unwrap();
        sum += e;
        sumsq += e * e;
    }
    let n = data.dataset.len() as f64;
    assert_eq!(n, 1e5);
    let var = sumsq / n - (sum / n).powi(2);
    assert!((var / (sigma * sigma) - 1.0).abs() < 0.02, "variance {var}");
}

#[test]
fn per_user_noise_stays_in_range() {
    let cfg = SyntheticConfig { noise: NoiseModel::PerUser { sigma_min: 0.2, sigma_max: 0.8 }, ..synth(0.5, 4) };
    let data = generate_synthetic(&cfg).unwrap();
    assert!(data.true_variances.values().iter().all(|v| (0.04..=0.64).contains(v)));
}

#[test]
fn noiseless_monte_carlo_is_zero() {
    let data = generate_synthetic(&synth(0.5, 5)).unwrap();
    let noise = UserVariances::new(vec![1e-20; 300], 1e-30).unwrap();
    let spec = MonteCarloSpec { estimator: EstimatorKind::LeastSquares, ridge: 0.0, gamma: 4.0, trials: 1, seed: 0 };
    let subset: Vec<usize> = (0..10).collect();
    let eval: Vec<usize> = (10..60).collect();
    let mse = monte_carlo_expected_mse(&data.truth, 0, &subset, &eval, &noise, &spec).unwrap();
    assert!(mse < 1e-12, "{mse}");
}

fn two_pass_rmse(pairs: &[(f64, f64)]) -> f64 {
    let errs: Vec<f64> = pairs.iter().map(|(p, a)| p - a).collect();
    let n = errs.len() as f64;
    (errs.iter().map(|e| e * e).sum::<f64>() / n).sqrt()
}

proptest! {
    #[test]
    fn rmse_matches_two_pass_oracle(pairs in prop::collection::vec((0.0f64..6.0, 1.0f64..5.0), 1..100)) {
        let fast = evaluate_rmse(&pairs, None).unwrap();
        prop_assert!((fast - two_pass_rmse(&pairs)).abs() < 1e-12);
        let clamped: Vec<(f64, f64)> = pairs.iter().map(|&(p, a)| (p.clamp(1.0, 5.0), a)).collect();
        let fast = evaluate_rmse(&pairs, Some(Scale::default())).unwrap();
        prop_assert!((fast - two_pass_rmse(&clamped)).abs() < 1e-12);
    }
}

fn sweep_config(methods: &[SelectionMethod], budgets: Vec<usize>, items: usize) -> SweepConfig {
    SweepConfig {
        budgets,
        methods: methods.iter().map(|&m| MethodSpec::new(m)).collect(),
        items,
        repeats: 3,
        seed: 11,
        options: SweepOptions::default(),
    }
}

fn csv(rows: &[coldstart::experiment::SweepRow]) -> Vec<u8> {
    let mut out = Vec::new();
    write_csv(rows, &mut out, CsvPrecision::Full).unwrap();
    out
}

#[test]
fn sweeps_are_reproducible() {
    let input = SweepInput::from_synthetic(&synth(0.5, 6), 10).unwrap();
    let cfg = sweep_config(&[SelectionMethod::Bgs1, SelectionMethod::Random, SelectionMethod::Cluster], vec![5, 10], 10);
    let a = run_sweep(&input, &cfg).unwrap();
    let b = run_sweep(&input, &cfg).unwrap();
    assert_eq!(csv(&a), csv(&b));
    assert_eq!(a.len(), 6);
    for r in &a {
        assert_eq!(r.items_evaluated + r.items_skipped, 10);
        assert_eq!(r.elapsed_ms, 0.0);
    }
}

#[test]
fn pooled_rmse_is_count_weighted() {
    let input = SweepInput::from_synthetic(&synth(0.5, 7), 6).unwrap();
    let cfg = sweep_config(&[SelectionMethod::Bgs1], vec![8], 6);
    let pooled = run_sweep(&input, &cfg).unwrap()[0].rmse;
    let mut sse = 0.0;
    let mut count = 0.0;
    for item in &input.new_items {
        let mut single = input.clone();
        single.new_items = vec![item.clone()];
        let rmse = run_sweep(&single, &SweepConfig { items: 1, ..cfg.clone() }).unwrap()[0].rmse;
        let n = input.heldout.ratings().iter().filter(|r| input.heldout.items().id(r.item) == item).count() as f64 - 8.0;
        sse += rmse * rmse * n;
        count += n;
    }
    assert!(((sse / count).sqrt() - pooled).abs() < 1e-12);
}

#[test]
fn nearly_full_budget_on_noiseless_data_is_exact() {
    let input = SweepInput::from_synthetic(&synth(1e-9, 8), 5).unwrap();
    let cfg = sweep_config(&[SelectionMethod::Random], vec![55, 60], 5);
    let rows = run_sweep(&input, &cfg).unwrap();
    assert!(rows[0].rmse < 0.05, "rmse {}", rows[0].rmse);
    assert_eq!(rows[0].items_evaluated, 5);
    assert_eq!(rows[1].items_evaluated, 0);
    assert_eq!(rows[1].items_skipped, 5);
}

#[test]
fn estimator_override_changes_label() {
    let input = SweepInput::from_synthetic(&synth(0.5, 9), 4).unwrap();
    let mut cfg = sweep_config(&[SelectionMethod::Random], vec![10], 4);
    cfg.methods.push(MethodSpec::with_estimator(SelectionMethod::Random, EstimatorKind::Similarity));
    let rows = run_sweep(&input, &cfg).unwrap();
    assert_eq!(rows[0].method, "random");
    assert_eq!(rows[1].method, "random+similarity");
}

#[test]
fn sweep_config_loads_from_file() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    writeln!(
        f,
        "budgets = [5, 10]\nitems = 3\nseed = 4\n\n[[method]]\nname = \"bgs1\"\n\n[[method]]\nname = \"random\"\nestimator = \"similarity\"\n\n[options]\nclamp = true\n\n[synthetic]\nn_users = 100\nn_items = 10\nk = 2\nraters_per_item = 30\nsigma = 0.3\n"
    )
    .unwrap();
    let file = load_sweep_config(f.path()).unwrap();
    assert_eq!(file.sweep.budgets, vec![5, 10]);
    assert_eq!(file.sweep.methods[1].label, "random+similarity");
    assert!(file.sweep.options.clamp);
    let s = file.synthetic.unwrap();
    assert_eq!((s.n_users, s.k), (100, 2));
    let rows = run_sweep(&SweepInput::from_synthetic(&s, file.sweep.items).unwrap(), &file.sweep).unwrap();
    assert_eq!(rows.len(), 4);
}
