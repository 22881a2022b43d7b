use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_coldstart")).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "coldstart {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_owned()
}

/// Quantized synthetic data with its true model and variances.
fn synth(dir: &TempDir) -> (String, String, String) {
    let (ratings, model, vars) = (path(dir.path(), "r.csv"), path(dir.path(), "m.txt"), path(dir.path(), "v.txt"));
    run(&[
        "synth", "--users", "200", "--items", "20", "--k", "2", "--raters-per-item", "40", "--sigma-range", "0.2:0.8", "--quantize",
        "--seed", "3", "--ratings-out", &ratings, "--model-out", &model, "--variances-out", &vars,
    ]);
    (ratings, model, vars)
}

#[test]
fn synth_writes_requested_counts() {
    let dir = TempDir::new().unwrap();
    let (ratings, _, vars) = synth(&dir);
    let text = std::fs::read_to_string(ratings).unwrap();
    assert_eq!(text.lines().count(), 800);
    assert_eq!(std::fs::read_to_string(vars).unwrap().lines().count(), 200);
}

#[test]
fn train_writes_model_and_variances() {
    let dir = TempDir::new().unwrap();
    let (ratings, _, _) = synth(&dir);
    let model = path(dir.path(), "trained.txt");
    let vars = path(dir.path(), "tv.txt");
    let out = run(&[
        "train", "--ratings", &ratings, "--out", &model, "--k", "2", "--epochs", "5", "--variances-out", &vars,
    ]);
    assert!(stdout(&out).contains("training rmse"));
    assert!(PathBuf::from(model).exists());
    assert!(!std::fs::read_to_string(vars).unwrap().is_empty());
}

#[test]
fn select_prints_budget_distinct_ids() {
    let dir = TempDir::new().unwrap();
    let (ratings, model, vars) = synth(&dir);
    for method in ["bgs1", "bgs2", "forward_greedy", "cluster", "random", "early_birds"] {
        let out = run(&[
            "select", "--model", &model, "--ratings", &ratings, "--item", "i0", "--variances", &vars, "--budget", "6", "--method",
            method, "--ridge", "0.01",
        ]);
        let ids: std::collections::BTreeSet<String> = stdout(&out).split_whitespace().map(str::to_owned).collect();
        assert_eq!(ids.len(), 6, "{method}");
        assert!(ids.iter().all(|id| id.starts_with('u')));
    }
}

#[test]
fn estimate_prints_parameters() {
    let dir = TempDir::new().unwrap();
    let (ratings, model, _) = synth(&dir);
    let out = run(&["estimate", "--model", &model, "--ratings", &ratings, "--item", "i1"]);
    let text = stdout(&out);
    assert!(text.starts_with("bias "));
    let factors = text.lines().nth(1).unwrap();
    assert_eq!(factors.split_whitespace().count(), 3);
}

#[test]
fn sweep_output_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let config = path(dir.path(), "sweep.toml");
    std::fs::write(
        &config,
        "budgets = [4, 8]\nitems = 4\nrepeats = 2\nseed = 1\n\n[[method]]\nname = \"bgs1\"\n\n[[method]]\nname = \"random\"\n\n\
         [synthetic]\nn_users = 150\nn_items = 12\nk = 2\nraters_per_item = 30\nsigma = 0.4\n",
    )
    .unwrap();
    let a = stdout(&run(&["sweep", "--config", &config]));
    let file = path(dir.path(), "out.csv");
    run(&["sweep", "--config", &config, "--out", &file]);
    assert_eq!(a, std::fs::read_to_string(&file).unwrap());
    assert_eq!(a.lines().count(), 5);
    assert!(a.lines().next().unwrap().starts_with("method,budget"));
}

#[test]
fn diagnose_reports_steepness() {
    let dir = TempDir::new().unwrap();
    let (ratings, model, _) = synth(&dir);
    let text = stdout(&run(&["diagnose", "--model", &model, "--ratings", &ratings, "--item", "i2", "--max-users", "8"]));
    assert!(text.contains("steepness"), "{text}");
    assert!(text.contains("monotonicity"));
}

#[test]
fn oracle_agrees_with_formula() {
    let text = stdout(&run(&["oracle", "--users", "200", "--trials", "4000", "--budget", "12", "--sigma", "0.5"]));
    let rel: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("relative"))
        .unwrap()
        .trim()
        .trim_end_matches('%')
        .parse()
        .unwrap();
    assert!(rel < 5.0, "{text}");
}

#[test]
fn bad_input_fails_cleanly() {
    let out = Command::new(env!("CARGO_BIN_EXE_coldstart"))
        .args(["select", "--model", "/nonexistent", "--ratings", "/nonexistent", "--item", "x", "--budget", "1"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());
}
