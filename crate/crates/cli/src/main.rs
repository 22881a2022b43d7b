use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use coldstart::data::{
    load_ratings, rater_pool, save_ratings, RaterPool, RatingDataset, RatingFormat, Scale, UnknownUsers, UserStats,
};
use coldstart::design::{check_monotone, check_supermodular_with, expected_mse, steepness_with, DesignObjective, MAX_EXACT_POOL};
use coldstart::estimators::{default_estimation_ridge, estimate, EstimatorKind, RevealedRatings, DEFAULT_GAMMA};
use coldstart::experiment::{
    generate_synthetic, load_sweep_config, monte_carlo_expected_mse, run_sweep, write_csv, CsvPrecision, MonteCarloSpec, NoiseModel,
    SweepInput, SyntheticConfig,
};
use coldstart::lfm::{estimate_user_variances, train_lfm, LatentModel, TrainConfig, UserVariances, DEFAULT_MIN_RATINGS, DEFAULT_VARIANCE_FLOOR};
use coldstart::numerics::default_ridge;
use coldstart::selection::{select, ClusterMode, SelectionMethod, SelectionParams, SelectionRequest, DEFAULT_THINNING_CAP};

/// Rater selection for new items in latent factor recommenders.
#[derive(Parser)]
#[command(name = "coldstart", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a latent factor model to a ratings file.
    Train(TrainArgs),
    /// Generate ratings from a random ground-truth model.
    Synth(SynthArgs),
    /// Choose raters for one item.
    Select(SelectArgs),
    /// Estimate a new item's bias and factors from its ratings.
    Estimate(EstimateArgs),
    /// Run a budget sweep and write the result table as CSV.
    Sweep(SweepArgs),
    /// Steepness, supermodularity and monotonicity of an item's design objective.
    Diagnose(DiagnoseArgs),
    /// Compare Monte Carlo error against the closed-form expected MSE.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct RatingsArgs {
    /// Ratings file.
    #[arg(long)]
    ratings: PathBuf,
    /// csv (user,item,rating[,timestamp]) or movielens (user::item::rating::timestamp).
    #[arg(long, default_value = "csv")]
    format: RatingFormat,
    /// Allowed rating range.
    #[arg(long, default_value = "1:5")]
    scale: Scale,
}

impl RatingsArgs {
    fn load(&self) -> Result<RatingDataset> {
        load_ratings(&self.ratings, self.format, self.scale).with_context(|| format!("reading {}", self.ratings.display()))
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    input: RatingsArgs,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    k: usize,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0.02)]
    l2: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write per-user noise variances estimated from training residuals.
    #[arg(long)]
    variances_out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_VARIANCE_FLOOR)]
    variance_floor: f64,
    #[arg(long, default_value_t = DEFAULT_MIN_RATINGS)]
    min_ratings: usize,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 1000)]
    users: usize,
    #[arg(long, default_value_t = 200)]
    items: usize,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 100)]
    raters_per_item: usize,
    /// Noise standard deviation shared by all users.
    #[arg(long, conflicts_with = "sigma_range")]
    sigma: Option<f64>,
    /// Per-user noise standard deviations drawn uniformly from MIN:MAX.
    #[arg(long)]
    sigma_range: Option<Scale>,
    #[arg(long, default_value_t = 0.3)]
    factor_scale: f64,
    /// Whiten user factors so the augmented population is isotropic.
    #[arg(long)]
    isotropic: bool,
    /// Round ratings to integers on 1-5.
    #[arg(long)]
    quantize: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    ratings_out: PathBuf,
    #[arg(long)]
    model_out: PathBuf,
    #[arg(long)]
    variances_out: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: RatingFormat,
}

#[derive(Args)]
struct PoolArgs {
    /// Model file written by `train` or `synth`.
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    input: RatingsArgs,
    /// Item whose raters form the pool.
    #[arg(long)]
    item: String,
    /// Per-user noise variances (`<user> <variance>` per line).
    #[arg(long)]
    variances: Option<PathBuf>,
}

impl PoolArgs {
    fn load(&self) -> Result<(LatentModel, RaterPool, Option<UserVariances>)> {
        let model = LatentModel::load(&self.model).with_context(|| format!("reading {}", self.model.display()))?;
        let ratings = self.input.load()?;
        let mut pool = rater_pool(&ratings, &model, &self.item, UnknownUsers::Skip)?;
        let variances = match &self.variances {
            Some(path) => Some(read_variances(path, &model)?),
            None => None,
        };
        if let Some(v) = &variances {
            pool = pool.with_variances(v)?;
        }
        Ok((model, pool, variances))
    }
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    pool: PoolArgs,
    #[arg(long)]
    budget: usize,
    #[arg(long, default_value = "bgs1")]
    method: SelectionMethod,
    /// Design ridge; 1e-6 (k+1) when omitted.
    #[arg(long)]
    ridge: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Training ratings, needed by `frequent` and `edgy`.
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long, default_value = "one_per_cluster")]
    cluster_mode: ClusterMode,
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_THINNING_CAP)]
    thinning_cap: usize,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    pool: PoolArgs,
    /// Comma-separated user ids whose ratings are revealed; all raters when omitted.
    #[arg(long, value_delimiter = ',')]
    users: Vec<String>,
    #[arg(long, default_value = "ls")]
    estimator: EstimatorKind,
    /// Estimation ridge; budget-dependent default when omitted.
    #[arg(long)]
    ridge: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_GAMMA)]
    gamma: f64,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Ratings to sweep over when the config has no [synthetic] section.
    #[arg(long)]
    ratings: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: RatingFormat,
    #[arg(long, default_value = "1:5")]
    scale: Scale,
    /// Held-out items; defaults to the configured item count.
    #[arg(long)]
    heldout: Option<usize>,
    /// Latent dimension of the model trained on the remaining items.
    #[arg(long, default_value_t = 20)]
    k: usize,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    /// CSV output; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write numbers at full precision instead of six significant digits.
    #[arg(long)]
    full_precision: bool,
    /// Record wall time in the elapsed_ms column.
    #[arg(long)]
    timing: bool,
    /// Select and estimate with the true noise variances (synthetic only).
    #[arg(long)]
    true_variances: bool,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    pool: PoolArgs,
    #[arg(long)]
    ridge: Option<f64>,
    /// Use the variance-weighted objective (needs --variances).
    #[arg(long)]
    weighted: bool,
    /// Restrict the pool to its first N users.
    #[arg(long, default_value_t = MAX_EXACT_POOL)]
    max_users: usize,
    /// Seed for sampled supermodularity triples on large pools.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value_t = 500)]
    users: usize,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 10)]
    budget: usize,
    #[arg(long, conflicts_with = "sigma_range")]
    sigma: Option<f64>,
    #[arg(long)]
    sigma_range: Option<Scale>,
    /// Defaults to gls with --sigma-range, ls otherwise.
    #[arg(long)]
    estimator: Option<EstimatorKind>,
    #[arg(long, default_value_t = 0.0)]
    ridge: f64,
    #[arg(long, default_value_t = 20_000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Train(a) => train(a),
        Command::Synth(a) => synth(a),
        Command::Select(a) => select_cmd(a),
        Command::Estimate(a) => estimate_cmd(a),
        Command::Sweep(a) => sweep(a),
        Command::Diagnose(a) => diagnose(a),
        Command::Oracle(a) => oracle(a),
    }
}

fn noise_model(sigma: Option<f64>, range: Option<Scale>) -> NoiseModel {
    match (sigma, range) {
        (_, Some(r)) => NoiseModel::PerUser {
            sigma_min: r.min,
            sigma_max: r.max,
        },
        (Some(sigma), None) => NoiseModel::Iid { sigma },
        (None, None) => NoiseModel::Iid { sigma: 0.5 },
    }
}

fn write_variances(path: &Path, model: &LatentModel, v: &UserVariances) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for (u, value) in v.values().iter().enumerate() {
        writeln!(out, "{} {:.16e}", model.users().id(u), value)?;
    }
    out.flush()?;
    Ok(())
}

fn read_variances(path: &Path, model: &LatentModel) -> Result<UserVariances> {
    let file = File::open(path).with_context(|| format!("reading {}", path.display()))?;
    let mut values = vec![None; model.n_users()];
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (id, v) = line
            .split_once(char::is_whitespace)
            .with_context(|| format!("{}:{}: expected `<user> <variance>`", path.display(), n + 1))?;
        let v: f64 = v
            .trim()
            .parse()
            .with_context(|| format!("{}:{}: bad variance", path.display(), n + 1))?;
        if let Some(u) = model.users().get(id) {
            values[u] = Some(v);
        }
    }
    let missing = values.iter().filter(|v| v.is_none()).count();
    if missing > 0 {
        bail!("{}: {missing} model users have no variance", path.display());
    }
    let values: Vec<f64> = values.into_iter().flatten().collect();
    let floor = values.iter().copied().fold(f64::INFINITY, f64::min).clamp(f64::MIN_POSITIVE, DEFAULT_VARIANCE_FLOOR);
    Ok(UserVariances::new(values, floor)?)
}

fn train(a: TrainArgs) -> Result<()> {
    let data = a.input.load()?;
    let config = TrainConfig {
        k: a.k,
        epochs: a.epochs,
        base_learning_rate: a.learning_rate,
        l2_penalty: a.l2,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let trained = train_lfm(&data, &config)?;
    trained.model.save(&a.out)?;
    if let Some(path) = &a.variances_out {
        let v = estimate_user_variances(&trained.model, &data, a.variance_floor, a.min_ratings)?;
        write_variances(path, &trained.model, &v)?;
    }
    let last = trained.epoch_rmse.last().copied().unwrap_or(f64::NAN);
    println!("users {} items {} k {} training rmse {last:.6}", trained.model.n_users(), trained.model.n_items(), a.k);
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let config = SyntheticConfig {
        n_users: a.users,
        n_items: a.items,
        k: a.k,
        raters_per_item: a.raters_per_item,
        noise: noise_model(a.sigma, a.sigma_range),
        factor_scale: a.factor_scale,
        isotropic: a.isotropic,
        quantize: a.quantize,
        seed: a.seed,
    };
    let data = generate_synthetic(&config)?;
    save_ratings(&data.dataset, &a.ratings_out, a.format)?;
    data.truth.save(&a.model_out)?;
    if let Some(path) = &a.variances_out {
        write_variances(path, &data.truth, &data.true_variances)?;
    }
    println!("{} ratings, scale {}", data.dataset.len(), data.dataset.scale());
    Ok(())
}

fn select_cmd(a: SelectArgs) -> Result<()> {
    let (model, pool, _) = a.pool.load()?;
    let stats = match &a.train {
        Some(path) => Some(UserStats::from_dataset(&load_ratings(path, a.pool.input.format, a.pool.input.scale)?, &model)),
        None => None,
    };
    let request = SelectionRequest {
        seed: a.seed,
        params: SelectionParams {
            cluster_mode: a.cluster_mode,
            clusters: a.clusters,
            thinning_cap: a.thinning_cap,
        },
        stats: stats.as_ref(),
        ..SelectionRequest::new(&pool, a.budget, a.method, a.ridge.unwrap_or_else(|| default_ridge(model.k() + 1)))
    };
    let result = select(&request)?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for &u in &result.selected {
        writeln!(out, "{}", model.users().id(u))?;
    }
    match result.objective {
        Some(v) => eprintln!("{}: {} of {} raters, objective {v:.6e}", result.method, result.selected.len(), pool.len()),
        None => eprintln!("{}: {} of {} raters", result.method, result.selected.len(), pool.len()),
    }
    Ok(())
}

fn estimate_cmd(a: EstimateArgs) -> Result<()> {
    let (model, pool, variances) = a.pool.load()?;
    let ratings = pool.ratings().context("pool has no ratings")?;
    let chosen: Vec<_> = if a.users.is_empty() {
        ratings.to_vec()
    } else {
        let mut out = Vec::with_capacity(a.users.len());
        for id in &a.users {
            let u = model.users().get(id).with_context(|| format!("unknown user {id:?}"))?;
            let p = pool.position(u).with_context(|| format!("user {id:?} did not rate {}", a.pool.item))?;
            out.push(ratings[p]);
        }
        out
    };
    let variances = match a.estimator {
        EstimatorKind::Gls => Some(variances.as_ref().context("gls needs --variances")?),
        _ => None,
    };
    let revealed = RevealedRatings::from_observed(&model, &chosen, variances)?;
    let raw: Vec<f64> = chosen.iter().map(|r| r.value).collect();
    let ridge = a.ridge.unwrap_or_else(|| default_estimation_ridge(chosen.len(), model.k()));
    let est = estimate(a.estimator, &revealed, &raw, ridge, a.gamma)?;
    println!("bias {:.10}", est.bias);
    let factors: Vec<String> = est.factors.iter().map(|x| format!("{x:.10}")).collect();
    println!("factors {}", factors.join(" "));
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let mut file = load_sweep_config(&a.config)?;
    if a.timing {
        file.sweep.options.timing = true;
    }
    if a.true_variances {
        file.sweep.options.true_variances = true;
    }
    let input = match (&file.synthetic, &a.ratings) {
        (Some(s), None) => SweepInput::from_synthetic(s, file.sweep.items)?,
        (None, Some(path)) => {
            let data = load_ratings(path, a.format, a.scale)?;
            let train = TrainConfig {
                k: a.k,
                epochs: a.epochs,
                seed: file.sweep.seed,
                ..TrainConfig::default()
            };
            SweepInput::from_ratings(&data, a.heldout.unwrap_or(file.sweep.items), &train, file.sweep.seed)?
        }
        (Some(_), Some(_)) => bail!("the config has a [synthetic] section; drop --ratings"),
        (None, None) => bail!("give --ratings or a [synthetic] section in the config"),
    };
    let rows = run_sweep(&input, &file.sweep)?;
    let precision = if a.full_precision {
        CsvPrecision::Full
    } else {
        CsvPrecision::Significant
    };
    match &a.out {
        Some(path) => {
            let mut out = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
            write_csv(&rows, &mut out, precision)?;
            out.flush()?;
        }
        None => write_csv(&rows, io::stdout().lock(), precision)?,
    }
    Ok(())
}

fn diagnose(a: DiagnoseArgs) -> Result<()> {
    let (model, pool, _) = a.pool.load()?;
    let pool = if pool.len() > a.max_users {
        let keep: Vec<usize> = (0..a.max_users).collect();
        pool.restrict(&keep)
    } else {
        pool
    };
    let ridge = a.ridge.unwrap_or_else(|| default_ridge(model.k() + 1));
    let obj = if a.weighted {
        if pool.variances().is_none() {
            bail!("--weighted needs --variances");
        }
        DesignObjective::weighted(ridge)
    } else {
        DesignObjective::a_opt(ridge)
    };
    println!("item {} pool {} ridge {ridge:e}", pool.item(), pool.len());
    let s = steepness_with(&obj, &pool)?;
    println!(
        "steepness s {:.6} t {:.6e} factor {:.6e} phi_empty {:.6e} ({}) argmax {}",
        s.s,
        s.t,
        s.factor,
        s.phi_empty,
        if s.phi_empty_exact { "exact" } else { "lower bound" },
        model.users().id(s.argmax_user)
    );
    let sm = check_supermodular_with(&obj, &pool, a.seed)?;
    println!(
        "supermodularity {} triples {} violations {} max excess {:.3e}",
        if sm.exhaustive { "exhaustive" } else { "sampled" },
        sm.triples_checked,
        sm.violations,
        sm.max_excess
    );
    if let Some(t) = sm.worst.as_ref().filter(|_| sm.violations > 0) {
        let ids = |ps: &[usize]| ps.iter().map(|&p| model.users().id(pool.users()[p]).to_owned()).collect::<Vec<_>>().join(",");
        println!("worst triple A={{{}}} B={{{}}} x={}", ids(&t.a), ids(&t.b), model.users().id(pool.users()[t.x]));
    }
    if pool.len() <= MAX_EXACT_POOL {
        let m = check_monotone(&obj, &pool)?;
        println!("monotonicity pairs {} violations {} max increase {:.3e}", m.pairs_checked, m.violations, m.max_increase);
    }
    Ok(())
}

fn oracle(a: OracleArgs) -> Result<()> {
    let hetero = a.sigma_range.is_some();
    let config = SyntheticConfig {
        n_users: a.users,
        n_items: 1,
        k: a.k,
        raters_per_item: 1,
        noise: noise_model(a.sigma, a.sigma_range),
        isotropic: true,
        seed: a.seed,
        ..SyntheticConfig::default()
    };
    let data = generate_synthetic(&config)?;
    let estimator = a
        .estimator
        .unwrap_or(if hetero { EstimatorKind::Gls } else { EstimatorKind::LeastSquares });
    let subset = coldstart::selection::random_select(
        &RaterPool::from_vectors("i0", (0..a.users).collect(), data.truth.augmented_users())?,
        a.budget,
        a.seed,
    )?
    .selected;
    let eval: Vec<usize> = (0..a.users).collect();
    let spec = MonteCarloSpec {
        estimator,
        ridge: a.ridge,
        gamma: DEFAULT_GAMMA,
        trials: a.trials,
        seed: a.seed,
    };
    let mc = monte_carlo_expected_mse(&data.truth, 0, &subset, &eval, &data.true_variances, &spec)?;
    let mut sorted = subset.clone();
    sorted.sort_unstable();
    let cols = data.truth.augmented_users().select_columns(&sorted);
    let pool = RaterPool::from_vectors("i0", sorted.clone(), cols)?.with_variances(&data.true_variances)?;
    let sigma2 = data.true_variances.values();
    let formula = if hetero {
        expected_mse(&DesignObjective::weighted(a.ridge), &pool, &sorted, sigma2)?
    } else {
        expected_mse(&DesignObjective::a_opt(a.ridge).with_sigma2(sigma2[0]), &pool, &sorted, sigma2)?
    };
    println!("estimator {estimator} trials {} budget {}", a.trials, a.budget);
    println!("monte carlo {mc:.6}");
    println!("formula     {formula:.6}");
    println!("relative    {:.4}%", 100.0 * (mc - formula).abs() / formula);
    Ok(())
}
