//! Budget sweeps: select, reveal, estimate and score every new item for each
//! (method, budget) cell.

use std::io::Write;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::data::{rater_pool, reveal, split_items, RaterPool, RatingDataset, Scale, UnknownUsers, UserStats};
use crate::design::{BoundObjective, DesignObjective};
use crate::estimators::{default_estimation_ridge, estimate, predict_new_item, EstimatorKind, RevealedRatings, DEFAULT_GAMMA};
use crate::experiment::synth::{generate_synthetic, SyntheticConfig};
use crate::lfm::{estimate_user_variances, train_lfm, LatentModel, TrainConfig, UserVariances, DEFAULT_MIN_RATINGS, DEFAULT_VARIANCE_FLOOR};
use crate::numerics::default_ridge;
use crate::selection::{
    elimination_order, forward_greedy, select, thin_pool, ClusterMode, SelectionMethod, SelectionParams, SelectionRequest,
    DEFAULT_THINNING_CAP,
};
use crate::{rng, Error, Result};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "COLDSTART_THREADS";

pub const CSV_HEADER: &str = "method,budget,rmse,rmse_stddev,mean_objective,items_evaluated,items_skipped,elapsed_ms";

/// One selection method and the estimator applied to its raters.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSpec {
    pub method: SelectionMethod,
    pub estimator: EstimatorKind,
    /// Name used in the output; defaults to the method tag, suffixed with the
    /// estimator when it differs from the default pairing.
    pub label: String,
}

impl MethodSpec {
    /// GLS for BGS2, least squares for everything else.
    pub fn default_estimator(method: SelectionMethod) -> EstimatorKind {
        match method {
            SelectionMethod::Bgs2 => EstimatorKind::Gls,
            _ => EstimatorKind::LeastSquares,
        }
    }

    pub fn new(method: SelectionMethod) -> Self {
        Self::with_estimator(method, Self::default_estimator(method))
    }

    pub fn with_estimator(method: SelectionMethod, estimator: EstimatorKind) -> Self {
        let label = if estimator == Self::default_estimator(method) {
            method.tag().to_owned()
        } else {
            format!("{}+{}", method.tag(), estimator.tag())
        };
        MethodSpec { method, estimator, label }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    /// Ridge of the selection objective; `1e-6 (k+1)` when unset.
    pub selection_ridge: Option<f64>,
    /// Ridge of the estimators; budget-dependent default when unset.
    pub estimation_ridge: Option<f64>,
    pub gamma: f64,
    /// Clamp predictions to the rating scale before scoring.
    pub clamp: bool,
    /// Select and estimate with the true noise variances (synthetic data).
    pub true_variances: bool,
    pub cluster_mode: ClusterMode,
    pub clusters: Option<usize>,
    pub thinning_cap: usize,
    /// Record wall time in `elapsed_ms`; otherwise the column is 0 so that
    /// output is byte-reproducible.
    pub timing: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            selection_ridge: None,
            estimation_ridge: None,
            gamma: DEFAULT_GAMMA,
            clamp: false,
            true_variances: false,
            cluster_mode: ClusterMode::default(),
            clusters: None,
            thinning_cap: DEFAULT_THINNING_CAP,
            timing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    /// Strictly ascending.
    pub budgets: Vec<usize>,
    pub methods: Vec<MethodSpec>,
    /// Number of new items evaluated (taken in order from the input).
    pub items: usize,
    /// Runs averaged for seed-dependent methods.
    pub repeats: usize,
    pub seed: u64,
    pub options: SweepOptions,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budgets.is_empty() || self.budgets[0] == 0 {
            return Err(Error::Config("budgets must be nonempty and >= 1".into()));
        }
        if self.budgets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("budgets must be strictly ascending".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods configured".into()));
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be >= 1".into()));
        }
        if self.items == 0 {
            return Err(Error::Config("items must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub method: String,
    pub budget: usize,
    /// Mean over repeats of the RMSE pooled across items.
    pub rmse: f64,
    /// Sample standard deviation of the pooled RMSE across repeats.
    pub rmse_stddev: f64,
    /// Mean A-optimal objective of the selections.
    pub mean_objective: f64,
    pub items_evaluated: usize,
    pub items_skipped: usize,
    pub elapsed_ms: f64,
}

/// Everything a sweep reads: a model for user vectors and biases, held-out
/// ratings of the new items, and training-side user statistics.
#[derive(Debug, Clone)]
pub struct SweepInput {
    pub model: LatentModel,
    pub heldout: RatingDataset,
    pub new_items: Vec<String>,
    /// Estimated `sigma_u^2` from training residuals.
    pub variances: Option<UserVariances>,
    pub true_variances: Option<UserVariances>,
    pub stats: Option<UserStats>,
    pub scale: Scale,
}

impl SweepInput {
    /// Synthetic input: the first `evaluated_items` items are new, the others
    /// provide training ratings. Pools are built on the true model.
    pub fn from_synthetic(config: &SyntheticConfig, evaluated_items: usize) -> Result<Self> {
        if evaluated_items >= config.n_items {
            return Err(Error::Config(format!(
                "{evaluated_items} evaluated items leaves no training items out of {}",
                config.n_items
            )));
        }
        let data = generate_synthetic(config)?;
        let new_items: Vec<String> = (0..evaluated_items).map(|i| format!("i{i}")).collect();
        let is_new: Vec<bool> = data
            .dataset
            .items()
            .ids()
            .iter()
            .map(|id| id[1..].parse::<usize>().is_ok_and(|i| i < evaluated_items))
            .collect();
        let train = data.dataset.filter(|r| !is_new[r.item]);
        let heldout = data.dataset.filter(|r| is_new[r.item]);
        let variances = estimate_user_variances(&data.truth, &train, DEFAULT_VARIANCE_FLOOR, DEFAULT_MIN_RATINGS)?;
        let stats = UserStats::from_dataset(&train, &data.truth);
        Ok(SweepInput {
            model: data.truth,
            scale: data.dataset.scale(),
            heldout,
            new_items,
            variances: Some(variances),
            true_variances: Some(data.true_variances),
            stats: Some(stats),
        })
    }

    /// Holds out `heldout_count` random items, trains on the rest and
    /// estimates per-user variances from the training residuals.
    pub fn from_ratings(dataset: &RatingDataset, heldout_count: usize, train: &TrainConfig, seed: u64) -> Result<Self> {
        let split = split_items(dataset, heldout_count, seed)?;
        let model = train_lfm(&split.train, train)?.model;
        let variances = estimate_user_variances(&model, &split.train, DEFAULT_VARIANCE_FLOOR, DEFAULT_MIN_RATINGS)?;
        let stats = UserStats::from_dataset(&split.train, &model);
        Ok(SweepInput {
            model,
            scale: dataset.scale(),
            heldout: split.heldout,
            new_items: split.new_items,
            variances: Some(variances),
            true_variances: None,
            stats: Some(stats),
        })
    }
}

/// Squared errors of one (item, budget) evaluation.
#[derive(Debug, Clone, Copy)]
struct Cell {
    sse: f64,
    count: usize,
    objective: f64,
    elapsed: Duration,
}

/// Worker pool honoring [`THREADS_ENV`].
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|n| *n >= 1)
            .ok_or_else(|| Error::Config(format!("{THREADS_ENV}={v:?} is not a positive integer")))?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| Error::Config(format!("thread pool: {e}")))
}

struct Context<'a> {
    input: &'a SweepInput,
    config: &'a SweepConfig,
    variances: Option<&'a UserVariances>,
    selection_ridge: f64,
}

impl Context<'_> {
    fn selections(&self, spec: &MethodSpec, pool: &RaterPool, item_index: usize, repeat: usize) -> Result<Vec<Option<(Vec<usize>, Duration)>>> {
        let budgets = &self.config.budgets;
        let n = pool.len();
        let valid: Vec<usize> = budgets.iter().copied().filter(|&b| b < n).collect();
        let mut out: Vec<Option<(Vec<usize>, Duration)>> = vec![None; budgets.len()];
        if valid.is_empty() {
            return Ok(out);
        }
        let place = |out: &mut Vec<Option<_>>, b: usize, sel: Vec<usize>, t: Duration| {
            let slot = budgets.iter().position(|&x| x == b).expect("budget from list");
            out[slot] = Some((sel, t));
        };
        match spec.method {
            SelectionMethod::Bgs1 | SelectionMethod::Bgs2 => {
                // Elimination to a budget passes through every larger budget.
                let started = Instant::now();
                let thinned = thin_pool(pool, self.config.options.thinning_cap);
                let weights = match spec.method {
                    SelectionMethod::Bgs2 => Some(thinned.weights().ok_or(Error::MissingVariances)?),
                    _ => None,
                };
                let smallest = valid[0].min(thinned.len());
                let order = elimination_order(&thinned, smallest, self.selection_ridge, weights.as_deref())?;
                let t = started.elapsed();
                for &b in &valid {
                    let b_eff = b.min(thinned.len());
                    let mut removed = vec![false; thinned.len()];
                    for &u in &order[..thinned.len() - b_eff] {
                        removed[thinned.position(u).expect("eliminated user is in the pool")] = true;
                    }
                    let sel: Vec<usize> = thinned
                        .users()
                        .iter()
                        .zip(&removed)
                        .filter(|(_, &r)| !r)
                        .map(|(&u, _)| u)
                        .collect();
                    place(&mut out, b, sel, t);
                }
            }
            SelectionMethod::ForwardGreedy => {
                let started = Instant::now();
                let thinned = thin_pool(pool, self.config.options.thinning_cap);
                let largest = valid[valid.len() - 1].min(thinned.len());
                let run = forward_greedy(&thinned, largest, self.selection_ridge)?;
                let t = started.elapsed();
                for &b in &valid {
                    place(&mut out, b, run.selected[..b.min(largest)].to_vec(), t);
                }
            }
            _ => {
                for &b in &valid {
                    let seed = rng::derive_seed(self.config.seed, &[b as u64, repeat as u64, item_index as u64]);
                    let request = SelectionRequest {
                        seed,
                        params: SelectionParams {
                            cluster_mode: self.config.options.cluster_mode,
                            clusters: self.config.options.clusters,
                            thinning_cap: self.config.options.thinning_cap,
                        },
                        stats: self.input.stats.as_ref(),
                        ..SelectionRequest::new(pool, b, spec.method, self.selection_ridge)
                    };
                    let r = select(&request)?;
                    place(&mut out, b, r.selected, r.elapsed);
                }
            }
        }
        Ok(out)
    }

    fn evaluate(&self, spec: &MethodSpec, pool: &RaterPool, subset: &[usize]) -> Result<Cell> {
        let started = Instant::now();
        let model = &self.input.model;
        let split = reveal(pool, subset)?;
        let variances = match spec.estimator {
            EstimatorKind::Gls => Some(self.variances.ok_or(Error::MissingVariances)?),
            _ => None,
        };
        let revealed = RevealedRatings::from_observed(model, &split.revealed, variances)?;
        let raw: Vec<f64> = split.revealed.iter().map(|r| r.value).collect();
        let options = &self.config.options;
        let ridge = options
            .estimation_ridge
            .unwrap_or_else(|| default_estimation_ridge(subset.len(), model.k()));
        let est = estimate(spec.estimator, &revealed, &raw, ridge, options.gamma)?;
        let mut sse = 0.0;
        for r in &split.remainder {
            let mut p = predict_new_item(model, &est, r.user)?;
            if options.clamp {
                p = self.input.scale.clamp(p);
            }
            sse += (p - r.value) * (p - r.value);
        }
        let obj = DesignObjective::a_opt(self.selection_ridge);
        let objective = BoundObjective::new(&obj, pool)?.value(&pool.positions(subset)?)?;
        Ok(Cell {
            sse,
            count: split.remainder.len(),
            objective,
            elapsed: started.elapsed(),
        })
    }
}

/// Runs every (method, budget) cell of the sweep.
///
/// Items whose pool is not larger than the budget are skipped for that cell.
/// Rows come out in (method, budget) order and, with timing off, depend only
/// on the input and the seed.
pub fn run_sweep(input: &SweepInput, config: &SweepConfig) -> Result<Vec<SweepRow>> {
    config.validate()?;
    thread_pool()?.install(|| sweep_inner(input, config))
}

fn sweep_inner(input: &SweepInput, config: &SweepConfig) -> Result<Vec<SweepRow>> {
    if input.new_items.len() < config.items {
        return Err(Error::Config(format!(
            "{} items requested but only {} new items available",
            config.items,
            input.new_items.len()
        )));
    }
    let variances = if config.options.true_variances {
        Some(
            input
                .true_variances
                .as_ref()
                .ok_or_else(|| Error::Config("true variances requested but unavailable".into()))?,
        )
    } else {
        input.variances.as_ref()
    };
    let ctx = Context {
        input,
        config,
        variances,
        selection_ridge: config
            .options
            .selection_ridge
            .unwrap_or_else(|| default_ridge(input.model.k() + 1)),
    };

    let pools: Vec<Option<RaterPool>> = input.new_items[..config.items]
        .par_iter()
        .map(|item| {
            let pool = match rater_pool(&input.heldout, &input.model, item, UnknownUsers::Skip) {
                Ok(p) => p,
                Err(Error::EmptyPool { .. }) => {
                    log::warn!("item {item:?} has no known raters; skipped");
                    return Ok(None);
                }
                Err(e) => return Err(e),
            };
            Ok(Some(match variances {
                Some(v) => pool.with_variances(v)?,
                None => pool,
            }))
        })
        .collect::<Result<_>>()?;

    let nb = config.budgets.len();
    let mut rows = Vec::with_capacity(config.methods.len() * nb);
    for spec in &config.methods {
        if spec.method == SelectionMethod::Bgs2 && variances.is_none() {
            return Err(Error::MissingVariances);
        }
        let repeats = if spec.method.is_stochastic() { config.repeats } else { 1 };
        // cells[repeat][item][budget]
        let mut cells: Vec<Vec<Vec<Option<Cell>>>> = Vec::with_capacity(repeats);
        for repeat in 0..repeats {
            let per_item: Vec<Vec<Option<Cell>>> = pools
                .par_iter()
                .enumerate()
                .map(|(i, pool)| {
                    let Some(pool) = pool else {
                        return Ok(vec![None; nb]);
                    };
                    let selections = ctx.selections(spec, pool, i, repeat)?;
                    selections
                        .into_iter()
                        .map(|s| match s {
                            Some((subset, t)) => {
                                let mut c = ctx.evaluate(spec, pool, &subset)?;
                                c.elapsed += t;
                                Ok(Some(c))
                            }
                            None => Ok(None),
                        })
                        .collect()
                })
                .collect::<Result<_>>()?;
            cells.push(per_item);
        }
        for (bi, &budget) in config.budgets.iter().enumerate() {
            let mut rmses = Vec::with_capacity(repeats);
            let mut objective_sum = 0.0;
            let mut objective_count = 0usize;
            let mut elapsed = Duration::ZERO;
            let mut evaluated = 0;
            for rep in &cells {
                let (mut sse, mut count) = (0.0, 0usize);
                evaluated = 0;
                for cell in rep.iter().filter_map(|item| item[bi]) {
                    sse += cell.sse;
                    count += cell.count;
                    objective_sum += cell.objective;
                    objective_count += 1;
                    elapsed += cell.elapsed;
                    evaluated += 1;
                }
                rmses.push(if count > 0 { (sse / count as f64).sqrt() } else { f64::NAN });
            }
            let skipped = config.items - evaluated;
            if skipped > 0 {
                log::warn!("{} at budget {budget}: {skipped} items skipped", spec.label);
            }
            let mean = rmses.iter().sum::<f64>() / rmses.len() as f64;
            let stddev = if rmses.len() > 1 {
                (rmses.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (rmses.len() - 1) as f64).sqrt()
            } else {
                0.0
            };
            rows.push(SweepRow {
                method: spec.label.clone(),
                budget,
                rmse: mean,
                rmse_stddev: stddev,
                mean_objective: if objective_count > 0 {
                    objective_sum / objective_count as f64
                } else {
                    f64::NAN
                },
                items_evaluated: evaluated,
                items_skipped: skipped,
                elapsed_ms: if config.options.timing {
                    elapsed.as_secs_f64() * 1e3 / repeats as f64
                } else {
                    0.0
                },
            });
        }
    }
    Ok(rows)
}

/// Number formatting in the CSV output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CsvPrecision {
    /// Six significant digits.
    #[default]
    Significant,
    /// Shortest representation that round-trips.
    Full,
}

/// Formats `x` with `digits` significant digits, `%g` style.
pub fn format_significant(x: f64, digits: usize) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -5 || exp >= digits as i32 {
        let m = trim_zeros(mantissa);
        return format!("{m}e{exp}");
    }
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    trim_zeros(&format!("{:.*}", decimals, x)).to_owned()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn fmt_value(x: f64, precision: CsvPrecision) -> String {
    match precision {
        CsvPrecision::Significant => format_significant(x, 6),
        CsvPrecision::Full => format!("{x:?}"),
    }
}

pub fn write_csv<W: Write>(rows: &[SweepRow], mut out: W, precision: CsvPrecision) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.method,
            r.budget,
            fmt_value(r.rmse, precision),
            fmt_value(r.rmse_stddev, precision),
            fmt_value(r.mean_objective, precision),
            r.items_evaluated,
            r.items_skipped,
            fmt_value(r.elapsed_ms, precision),
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_digits() {
        assert_eq!(format_significant(0.0, 6), "0");
        assert_eq!(format_significant(1.0, 6), "1");
        assert_eq!(format_significant(0.123456789, 6), "0.123457");
        assert_eq!(format_significant(123456.7, 6), "123457");
        assert_eq!(format_significant(1234567.0, 6), "1.23457e6");
        assert_eq!(format_significant(1.5e-7, 6), "1.5e-7");
        assert_eq!(format_significant(-2.5, 6), "-2.5");
        assert_eq!(format_significant(f64::NAN, 6), "NaN");
    }

    #[test]
    fn labels_follow_estimator_pairing() {
        assert_eq!(MethodSpec::new(SelectionMethod::Bgs2).estimator, EstimatorKind::Gls);
        assert_eq!(MethodSpec::new(SelectionMethod::Random).label, "random");
        assert_eq!(
            MethodSpec::with_estimator(SelectionMethod::Random, EstimatorKind::Similarity).label,
            "random+similarity"
        );
    }

    #[test]
    fn config_validation() {
        let mut c = SweepConfig {
            budgets: vec![2, 4],
            methods: vec![MethodSpec::new(SelectionMethod::Random)],
            items: 3,
            repeats: 1,
            seed: 0,
            options: SweepOptions::default(),
        };
        assert!(c.validate().is_ok());
        c.budgets = vec![4, 2];
        assert!(c.validate().is_err());
        c.budgets = vec![2];
        c.repeats = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn csv_header_and_row() {
        let rows = [SweepRow {
            method: "random".into(),
            budget: 4,
            rmse: 0.5,
            rmse_stddev: 0.0,
            mean_objective: 2.0 / 3.0,
            items_evaluated: 3,
            items_skipped: 1,
            elapsed_ms: 0.0,
        }];
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf, CsvPrecision::Significant).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s, format!("{CSV_HEADER}\nrandom,4,0.5,0,0.666667,3,1,0\n"));
    }
}
