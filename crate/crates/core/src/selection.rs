//! Choosing which `B` raters of a pool to query for a new item.
//!
//! Backward greedy selection starts from the whole pool and repeatedly drops
//! the rater whose removal increases `Trace(M^{-1})` the least, keeping
//! `M^{-1}` current with Sherman–Morrison downdates. BGS2 weights every
//! rank-one term by the rater's inverse noise variance. The remaining methods
//! are the comparison baselines and an exhaustive oracle for small pools.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::seq::index;
use rand::Rng as _;
use rayon::prelude::*;

use crate::data::{RaterPool, UserStats};
use crate::design::{BoundObjective, DesignObjective};
use crate::numerics::{delta_from_terms, gram, invert, InverseState, REFACTOR_INTERVAL};
use crate::{rng, Error, Result};

/// Relative difference below which two candidate deltas count as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Pools above this size are thinned before greedy selection.
pub const DEFAULT_THINNING_CAP: usize = 20_000;

/// Upper bound on subsets enumerated by [`brute_force_optimal`].
pub const BRUTE_FORCE_LIMIT: u128 = 1_000_000;

const KMEANS_MAX_ITER: usize = 100;
const KMEANS_TOLERANCE: f64 = 1e-6;

/// Candidate scans switch to rayon above this many active users.
const PARALLEL_SCAN_MIN: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SelectionMethod {
    Bgs1,
    Bgs2,
    ForwardGreedy,
    Cluster,
    Random,
    Frequent,
    Edgy,
    EarlyBirds,
    BruteForce,
}

impl SelectionMethod {
    pub const ALL: [SelectionMethod; 9] = [
        SelectionMethod::Bgs1,
        SelectionMethod::Bgs2,
        SelectionMethod::ForwardGreedy,
        SelectionMethod::Cluster,
        SelectionMethod::Random,
        SelectionMethod::Frequent,
        SelectionMethod::Edgy,
        SelectionMethod::EarlyBirds,
        SelectionMethod::BruteForce,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            SelectionMethod::Bgs1 => "bgs1",
            SelectionMethod::Bgs2 => "bgs2",
            SelectionMethod::ForwardGreedy => "forward_greedy",
            SelectionMethod::Cluster => "cluster",
            SelectionMethod::Random => "random",
            SelectionMethod::Frequent => "frequent",
            SelectionMethod::Edgy => "edgy",
            SelectionMethod::EarlyBirds => "early_birds",
            SelectionMethod::BruteForce => "brute_force",
        }
    }

    /// Whether the result depends on the seed.
    pub fn is_stochastic(self) -> bool {
        matches!(self, SelectionMethod::Cluster | SelectionMethod::Random)
    }
}

impl fmt::Display for SelectionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for SelectionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let m = match s {
            "bgs1" => SelectionMethod::Bgs1,
            "bgs2" => SelectionMethod::Bgs2,
            "forward_greedy" | "forward" => SelectionMethod::ForwardGreedy,
            "cluster" => SelectionMethod::Cluster,
            "random" => SelectionMethod::Random,
            "frequent" => SelectionMethod::Frequent,
            "edgy" => SelectionMethod::Edgy,
            "early_birds" => SelectionMethod::EarlyBirds,
            "brute_force" => SelectionMethod::BruteForce,
            other => return Err(Error::invalid(format!("unknown selection method {other:?}"))),
        };
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClusterMode {
    /// `B` clusters, the user nearest each centroid.
    #[default]
    OnePerCluster,
    /// `c < B` clusters, sampled in proportion to cluster size.
    Proportional,
}

impl FromStr for ClusterMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one_per_cluster" => Ok(ClusterMode::OnePerCluster),
            "proportional" => Ok(ClusterMode::Proportional),
            other => Err(Error::invalid(format!("unknown cluster mode {other:?}"))),
        }
    }
}

impl fmt::Display for ClusterMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClusterMode::OnePerCluster => "one_per_cluster",
            ClusterMode::Proportional => "proportional",
        })
    }
}

/// Per-method settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionParams {
    pub cluster_mode: ClusterMode,
    /// Cluster count for proportional mode; `max(2, B / 5)` when unset.
    pub clusters: Option<usize>,
    pub thinning_cap: usize,
}

impl Default for SelectionParams {
    fn default() -> Self {
        SelectionParams {
            cluster_mode: ClusterMode::default(),
            clusters: None,
            thinning_cap: DEFAULT_THINNING_CAP,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SelectionRequest<'a> {
    pub pool: &'a RaterPool,
    pub budget: usize,
    pub method: SelectionMethod,
    pub ridge: f64,
    pub seed: u64,
    pub params: SelectionParams,
    /// Training statistics for `frequent` and `edgy`.
    pub stats: Option<&'a UserStats>,
    /// Objective minimized by `brute_force`; A-optimal at `ridge` when unset.
    pub objective: Option<DesignObjective>,
}

impl<'a> SelectionRequest<'a> {
    pub fn new(pool: &'a RaterPool, budget: usize, method: SelectionMethod, ridge: f64) -> Self {
        SelectionRequest {
            pool,
            budget,
            method,
            ridge,
            seed: 0,
            params: SelectionParams::default(),
            stats: None,
            objective: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub method: SelectionMethod,
    /// User indices in selection order.
    pub selected: Vec<usize>,
    /// Design objective of the selection, when the design is nonsingular.
    pub objective: Option<f64>,
    /// Objective after every greedy step, as tracked incrementally.
    pub objective_path: Vec<f64>,
    pub elapsed: Duration,
}

impl SelectionResult {
    fn new(method: SelectionMethod, selected: Vec<usize>) -> Self {
        SelectionResult {
            method,
            selected,
            objective: None,
            objective_path: Vec::new(),
            elapsed: Duration::ZERO,
        }
    }
}

fn check_budget(pool: &RaterPool, budget: usize) -> Result<()> {
    if budget == 0 || budget > pool.len() {
        return Err(Error::invalid(format!(
            "budget {budget} outside 1..={} for item {:?}",
            pool.len(),
            pool.item()
        )));
    }
    Ok(())
}

/// Scans candidate deltas in ascending position order and returns the
/// position with the smallest delta; near-ties go to the earlier position.
fn argmin_with_ties(candidates: impl Iterator<Item = (usize, f64)>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (p, delta) in candidates {
        match best {
            None => best = Some((p, delta)),
            Some((_, b)) => {
                let scale = b.abs().max(delta.abs());
                if delta < b - TIE_TOLERANCE * scale {
                    best = Some((p, delta));
                }
            }
        }
    }
    best
}

fn scan<F>(positions: &[usize], eval: F) -> Vec<(usize, Option<f64>)>
where
    F: Fn(usize) -> Option<f64> + Sync,
{
    if positions.len() >= PARALLEL_SCAN_MIN {
        positions.par_iter().map(|&p| (p, eval(p))).collect()
    } else {
        positions.iter().map(|&p| (p, eval(p))).collect()
    }
}

fn state_for(pool: &RaterPool, positions: &[usize], weights: Option<&[f64]>, ridge: f64) -> Result<InverseState> {
    let cols = pool.columns(positions);
    let w: Option<Vec<f64>> = weights.map(|w| positions.iter().map(|&p| w[p]).collect());
    invert(&gram(&cols, w.as_deref(), ridge)?).map_err(|_| Error::InsufficientDesign)
}

/// Outcome of a greedy pass, in pool positions.
struct GreedyRun {
    kept: Vec<usize>,
    order: Vec<usize>,
    objective: f64,
    path: Vec<f64>,
}

fn backward_pass(pool: &RaterPool, budget: usize, ridge: f64, weights: Option<&[f64]>) -> Result<GreedyRun> {
    check_budget(pool, budget)?;
    let n = pool.len();
    let mut active: Vec<usize> = (0..n).collect();
    let mut state = state_for(pool, &active, weights, ridge)?;
    let mut path = vec![state.trace_inv()];
    let mut order = Vec::with_capacity(n - budget);
    let mut updates = 0usize;
    let weight = |p: usize| weights.map_or(1.0, |w| w[p]);

    for step in 0..n - budget {
        let deltas = scan(&active, |p| {
            let terms = state.rank_one_terms(pool.vector(p));
            delta_from_terms(terms, weight(p)).ok()
        });
        let pick = argmin_with_ties(deltas.iter().filter_map(|&(p, d)| d.map(|d| (p, d))));
        match pick {
            Some((p, _)) => {
                state.apply_downdate(pool.vector(p), weight(p))?;
                active.retain(|&q| q != p);
                order.push(p);
                updates += 1;
                if updates % REFACTOR_INTERVAL == 0 {
                    state = state_for(pool, &active, weights, ridge)?;
                }
            }
            None => {
                // Every rank-one removal looks singular: rebuild and remove
                // the first user whose removal leaves a nonsingular design.
                log::warn!("item {:?}: all removals forbidden at step {step}", pool.item());
                let mut removed = None;
                for (i, &p) in active.iter().enumerate() {
                    let mut rest = active.clone();
                    rest.remove(i);
                    if let Ok(s) = state_for(pool, &rest, weights, ridge) {
                        removed = Some((i, p, s));
                        break;
                    }
                }
                let (i, p, s) = removed.ok_or(Error::RankCollapse { step })?;
                active.remove(i);
                order.push(p);
                state = s;
                updates = 0;
            }
        }
        path.push(state.trace_inv());
    }
    Ok(GreedyRun {
        kept: active,
        order,
        objective: state.trace_inv(),
        path,
    })
}

fn forward_pass(pool: &RaterPool, budget: usize, ridge: f64, weights: Option<&[f64]>) -> Result<GreedyRun> {
    check_budget(pool, budget)?;
    if !(ridge > 0.0) {
        return Err(Error::invalid("forward greedy needs a positive ridge"));
    }
    let n = pool.len();
    let mut state = state_for(pool, &[], weights, ridge)?;
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut order = Vec::with_capacity(budget);
    let mut path = vec![state.trace_inv()];
    let weight = |p: usize| weights.map_or(1.0, |w| w[p]);

    for step in 0..budget {
        let deltas = scan(&remaining, |p| {
            let terms = state.rank_one_terms(pool.vector(p));
            delta_from_terms(terms, -weight(p)).ok()
        });
        let (p, _) = argmin_with_ties(deltas.iter().filter_map(|&(p, d)| d.map(|d| (p, d))))
            .ok_or(Error::RankCollapse { step })?;
        state.apply_downdate(pool.vector(p), -weight(p))?;
        remaining.retain(|&q| q != p);
        order.push(p);
        if (step + 1) % REFACTOR_INTERVAL == 0 {
            state = state_for(pool, &order, weights, ridge)?;
        }
        path.push(state.trace_inv());
    }
    Ok(GreedyRun {
        kept: order.clone(),
        order,
        objective: state.trace_inv(),
        path,
    })
}

fn to_users(pool: &RaterPool, positions: &[usize]) -> Vec<usize> {
    positions.iter().map(|&p| pool.users()[p]).collect()
}

/// Backward greedy elimination, optionally with per-user weights `1/sigma^2`
/// (indexed by pool position).
///
/// `selected` lists the kept users in ascending order; `objective_path[j]` is
/// the incrementally tracked objective after `j` eliminations.
pub fn backward_greedy(pool: &RaterPool, budget: usize, ridge: f64, weights: Option<&[f64]>) -> Result<SelectionResult> {
    if let Some(w) = weights {
        if w.len() != pool.len() {
            return Err(Error::invalid("weight count does not match the pool"));
        }
    }
    let run = backward_pass(pool, budget, ridge, weights)?;
    let method = if weights.is_some() {
        SelectionMethod::Bgs2
    } else {
        SelectionMethod::Bgs1
    };
    Ok(SelectionResult {
        objective: Some(run.objective),
        objective_path: run.path,
        ..SelectionResult::new(method, to_users(pool, &run.kept))
    })
}

/// Users eliminated by backward greedy, in elimination order.
pub fn elimination_order(pool: &RaterPool, budget: usize, ridge: f64, weights: Option<&[f64]>) -> Result<Vec<usize>> {
    Ok(to_users(pool, &backward_pass(pool, budget, ridge, weights)?.order))
}

/// Backward greedy on the unweighted A-optimal objective.
pub fn bgs1(pool: &RaterPool, budget: usize, ridge: f64) -> Result<SelectionResult> {
    backward_greedy(pool, budget, ridge, None)
}

/// Backward greedy with every term weighted by `1 / sigma_v^2`.
pub fn bgs2(pool: &RaterPool, budget: usize, ridge: f64) -> Result<SelectionResult> {
    let weights = pool.weights().ok_or(Error::MissingVariances)?;
    backward_greedy(pool, budget, ridge, Some(&weights))
}

/// Adds users one at a time from `ridge * I`, each minimizing the trace.
pub fn forward_greedy(pool: &RaterPool, budget: usize, ridge: f64) -> Result<SelectionResult> {
    let run = forward_pass(pool, budget, ridge, None)?;
    Ok(SelectionResult {
        objective: Some(run.objective),
        objective_path: run.path,
        ..SelectionResult::new(SelectionMethod::ForwardGreedy, to_users(pool, &run.order))
    })
}

/// Default cluster count for proportional mode.
pub fn default_cluster_count(budget: usize) -> usize {
    (budget / 5).max(2).min(budget.saturating_sub(1)).max(1)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Spherical k-means. Returns `(centroids, assignment)`.
fn kmeans(points: &[Vec<f64>], c: usize, rng: &mut rng::Rng) -> (Vec<Vec<f64>>, Vec<usize>) {
    let n = points.len();
    let dim = points[0].len();
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(c);
    centroids.push(points[rng.random_range(0..n)].clone());
    let mut nearest: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < c {
        let (far, _) = nearest
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
        centroids.push(points[far].clone());
        let last = centroids.last().unwrap();
        for (d, p) in nearest.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, last));
        }
    }

    let mut assignment = vec![0usize; n];
    for _ in 0..KMEANS_MAX_ITER {
        for (i, p) in points.iter().enumerate() {
            let mut best = (0, f64::INFINITY);
            for (j, cen) in centroids.iter().enumerate() {
                let d = sq_dist(p, cen);
                if d < best.1 {
                    best = (j, d);
                }
            }
            assignment[i] = best.0;
        }
        let mut sums = vec![vec![0.0; dim]; c];
        let mut sizes = vec![0usize; c];
        for (i, p) in points.iter().enumerate() {
            sizes[assignment[i]] += 1;
            for (s, x) in sums[assignment[i]].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut movement = 0.0f64;
        for j in 0..c {
            let next = if sizes[j] == 0 {
                // reseed from the point farthest from its own centroid
                let far = (0..n)
                    .map(|i| (i, sq_dist(&points[i], &centroids[assignment[i]])))
                    .fold((0, f64::NEG_INFINITY), |b, x| if x.1 > b.1 { x } else { b })
                    .0;
                points[far].clone()
            } else {
                let norm = sums[j].iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 0.0 {
                    sums[j].iter().map(|x| x / norm).collect()
                } else {
                    sums[j].iter().map(|x| x / sizes[j] as f64).collect()
                }
            };
            movement = movement.max(sq_dist(&next, &centroids[j]).sqrt());
            centroids[j] = next;
        }
        if movement < KMEANS_TOLERANCE {
            break;
        }
    }
    for (i, p) in points.iter().enumerate() {
        let mut best = (0, f64::INFINITY);
        for (j, cen) in centroids.iter().enumerate() {
            let d = sq_dist(p, cen);
            if d < best.1 {
                best = (j, d);
            }
        }
        assignment[i] = best.0;
    }
    (centroids, assignment)
}

/// k-means on unit-normalized factor vectors `P_v`.
///
/// Users with a zero factor vector are left out and never selected.
pub fn cluster_select(pool: &RaterPool, budget: usize, mode: ClusterMode, clusters: Option<usize>, seed: u64) -> Result<SelectionResult> {
    check_budget(pool, budget)?;
    let k = pool.order() - 1;
    let mut eligible = Vec::new();
    let mut points = Vec::new();
    for p in 0..pool.len() {
        let f = &pool.vector(p)[1..];
        let norm = f.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 && norm.is_finite() && k > 0 {
            eligible.push(p);
            points.push(f.iter().map(|x| x / norm).collect::<Vec<f64>>());
        }
    }
    if eligible.len() < budget {
        return Err(Error::DegeneratePool(format!(
            "only {} users with nonzero factors for budget {budget}",
            eligible.len()
        )));
    }
    let c = match mode {
        ClusterMode::OnePerCluster => budget,
        ClusterMode::Proportional => {
            let c = clusters.unwrap_or_else(|| default_cluster_count(budget));
            if c == 0 || (c >= budget && c != 1) {
                return Err(Error::invalid(format!("proportional mode needs 1 <= c < B, got c={c}, B={budget}")));
            }
            c
        }
    };
    let mut rng = rng::seeded(seed);
    let (centroids, assignment) = kmeans(&points, c, &mut rng);

    let mut chosen = Vec::with_capacity(budget);
    let mut taken = vec![false; points.len()];
    match mode {
        ClusterMode::OnePerCluster => {
            for (j, cen) in centroids.iter().enumerate() {
                let nearest = |in_cluster: bool| {
                    (0..points.len())
                        .filter(|&i| !taken[i] && (!in_cluster || assignment[i] == j))
                        .map(|i| (i, sq_dist(&points[i], cen)))
                        .fold(None, |b: Option<(usize, f64)>, x| match b {
                            Some(b) if b.1 <= x.1 => Some(b),
                            _ => Some(x),
                        })
                };
                let (i, _) = nearest(true).or_else(|| nearest(false)).expect("enough eligible users");
                taken[i] = true;
                chosen.push(eligible[i]);
            }
        }
        ClusterMode::Proportional => {
            let mut members = vec![Vec::new(); c];
            for (i, &a) in assignment.iter().enumerate() {
                members[a].push(i);
            }
            let total = points.len() as f64;
            let exact: Vec<f64> = members.iter().map(|m| budget as f64 * m.len() as f64 / total).collect();
            let mut quota: Vec<usize> = exact.iter().map(|q| q.floor() as usize).collect();
            let short = budget - quota.iter().sum::<usize>();
            let mut by_remainder: Vec<usize> = (0..c).collect();
            by_remainder.sort_by(|&a, &b| {
                let ra = exact[a] - exact[a].floor();
                let rb = exact[b] - exact[b].floor();
                rb.total_cmp(&ra).then(a.cmp(&b))
            });
            for &j in by_remainder.iter().take(short) {
                quota[j] += 1;
            }
            for (j, m) in members.iter().enumerate() {
                for i in index::sample(&mut rng, m.len(), quota[j].min(m.len())) {
                    chosen.push(eligible[m[i]]);
                }
            }
        }
    }
    Ok(SelectionResult::new(SelectionMethod::Cluster, to_users(pool, &chosen)))
}

/// Uniform sample of `budget` users without replacement.
pub fn random_select(pool: &RaterPool, budget: usize, seed: u64) -> Result<SelectionResult> {
    check_budget(pool, budget)?;
    let mut rng = rng::seeded(seed);
    let positions: Vec<usize> = index::sample(&mut rng, pool.len(), budget).into_vec();
    Ok(SelectionResult::new(SelectionMethod::Random, to_users(pool, &positions)))
}

fn top_by<F>(pool: &RaterPool, budget: usize, method: SelectionMethod, score: F) -> Result<SelectionResult>
where
    F: Fn(usize) -> f64,
{
    check_budget(pool, budget)?;
    let mut users: Vec<(usize, f64)> = pool.users().iter().map(|&u| (u, score(u))).collect();
    users.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(SelectionResult::new(method, users.into_iter().take(budget).map(|(u, _)| u).collect()))
}

fn stat_lookup(values: &[f64], u: usize) -> f64 {
    values.get(u).copied().unwrap_or(0.0)
}

/// The `budget` users with the most training ratings.
pub fn frequent_raters(pool: &RaterPool, budget: usize, stats: &UserStats) -> Result<SelectionResult> {
    top_by(pool, budget, SelectionMethod::Frequent, |u| {
        stats.counts.get(u).copied().unwrap_or(0) as f64
    })
}

/// The `budget` users whose training ratings vary the most.
pub fn edgy_raters(pool: &RaterPool, budget: usize, stats: &UserStats) -> Result<SelectionResult> {
    top_by(pool, budget, SelectionMethod::Edgy, |u| stat_lookup(&stats.variances, u))
}

/// The first `budget` raters of the item by timestamp.
pub fn early_birds(pool: &RaterPool, budget: usize) -> Result<SelectionResult> {
    check_budget(pool, budget)?;
    let mut order: Vec<(i64, usize)> = match pool.ratings() {
        Some(r) => r.iter().map(|r| (r.timestamp, r.user)).collect(),
        None => pool.users().iter().map(|&u| (0, u)).collect(),
    };
    order.sort();
    Ok(SelectionResult::new(
        SelectionMethod::EarlyBirds,
        order.into_iter().take(budget).map(|(_, u)| u).collect(),
    ))
}

/// `n choose r` saturating at `u128::MAX`.
pub fn binomial(n: usize, r: usize) -> u128 {
    if r > n {
        return 0;
    }
    let r = r.min(n - r);
    let mut acc: u128 = 1;
    for i in 0..r {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

fn combinations(n: usize, r: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut c: Vec<usize> = (0..r).collect();
    loop {
        out.push(c.clone());
        let mut i = r;
        while i > 0 && c[i - 1] == n - r + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        c[i - 1] += 1;
        for j in i..r {
            c[j] = c[j - 1] + 1;
        }
    }
}

/// Exhaustive minimum of `objective` over all subsets of size `budget`.
///
/// Subsets with a singular design are skipped; ties go to the
/// lexicographically smallest subset.
pub fn brute_force_optimal(pool: &RaterPool, budget: usize, objective: &DesignObjective) -> Result<SelectionResult> {
    check_budget(pool, budget)?;
    let count = binomial(pool.len(), budget);
    if count > BRUTE_FORCE_LIMIT {
        return Err(Error::CombinatorialGuard {
            count,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let bound = BoundObjective::new(objective, pool)?;
    let combos = combinations(pool.len(), budget);
    let values: Vec<Option<f64>> = combos
        .par_iter()
        .map(|c| match bound.value(c) {
            Ok(v) => Ok(Some(v)),
            Err(Error::InsufficientDesign) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.iter().enumerate() {
        if let Some(v) = *v {
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((i, v));
            }
        }
    }
    let (i, v) = best.ok_or(Error::InsufficientDesign)?;
    Ok(SelectionResult {
        objective: Some(v),
        ..SelectionResult::new(SelectionMethod::BruteForce, to_users(pool, &combos[i]))
    })
}

/// Keeps the `cap` users with the largest augmented-vector norm.
pub fn thin_pool(pool: &RaterPool, cap: usize) -> RaterPool {
    if pool.len() <= cap {
        return pool.clone();
    }
    let mut scored: Vec<(usize, f64)> = (0..pool.len())
        .map(|p| (p, pool.vector(p).iter().map(|x| x * x).sum::<f64>()))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut keep: Vec<usize> = scored.into_iter().take(cap).map(|(p, _)| p).collect();
    keep.sort_unstable();
    pool.restrict(&keep)
}

/// Runs the requested method and fills in the objective and timing.
pub fn select(request: &SelectionRequest<'_>) -> Result<SelectionResult> {
    let started = Instant::now();
    let pool = request.pool;
    let (budget, ridge, seed) = (request.budget, request.ridge, request.seed);
    let needs_stats = || {
        request
            .stats
            .ok_or_else(|| Error::invalid(format!("{} needs training statistics", request.method)))
    };
    let greedy_pool = || thin_pool(pool, request.params.thinning_cap);
    let mut result = match request.method {
        SelectionMethod::Bgs1 => bgs1(&greedy_pool(), budget, ridge)?,
        SelectionMethod::Bgs2 => bgs2(&greedy_pool(), budget, ridge)?,
        SelectionMethod::ForwardGreedy => forward_greedy(&greedy_pool(), budget, ridge)?,
        SelectionMethod::Cluster => cluster_select(pool, budget, request.params.cluster_mode, request.params.clusters, seed)?,
        SelectionMethod::Random => random_select(pool, budget, seed)?,
        SelectionMethod::Frequent => frequent_raters(pool, budget, needs_stats()?)?,
        SelectionMethod::Edgy => edgy_raters(pool, budget, needs_stats()?)?,
        SelectionMethod::EarlyBirds => early_birds(pool, budget)?,
        SelectionMethod::BruteForce => {
            let obj = request.objective.clone().unwrap_or_else(|| DesignObjective::a_opt(ridge));
            brute_force_optimal(pool, budget, &obj)?
        }
    };
    if result.objective.is_none() {
        let obj = DesignObjective::a_opt(ridge);
        let bound = BoundObjective::new(&obj, pool)?;
        result.objective = bound.value(&pool.positions(&result.selected)?).ok();
    }
    result.elapsed = started.elapsed();
    Ok(result)
}
