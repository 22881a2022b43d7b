//! Design objectives over rater subsets and the set-function diagnostics
//! behind the greedy guarantee.
//!
//! For a subset `S` of a pool with augmented vectors `P'_v`:
//!
//! * A-optimal: `Trace((ridge I + P_S P_S^T)^{-1})`;
//! * weighted A-optimal: the same with each rank-one term scaled by `1/sigma_v^2`;
//! * transductive: `Trace(Sigma (ridge I + P_S P_S^T)^{-1})` for a target
//!   second-moment matrix `Sigma`, which is what the expected error reduces to
//!   when the evaluation population is not isotropic.
//!
//! `Phi(S) = f(S) - f(pool)` shifts the objective so that it vanishes on the
//! full pool. `Phi(empty)` is taken from the extension
//! `max_{A, B disjoint} Phi(A) + Phi(B) - Phi(A u B)`, computed exactly for
//! pools of at most [`MAX_EXACT_POOL`] users and bounded below from
//! singleton/complement pairs beyond that.

use nalgebra::DMatrix;
use rand::Rng as _;
use rayon::prelude::*;

use crate::data::RaterPool;
use crate::numerics::{gram, invert};
use crate::{rng, Error, Result};

/// Largest pool for which `Phi(empty)` and supermodularity are enumerated.
pub const MAX_EXACT_POOL: usize = 12;

/// Triples drawn when a pool is too large to enumerate.
pub const SAMPLED_TRIPLES: usize = 10_000;

/// Relative slack for the supermodularity and monotonicity checks.
pub const DIAGNOSTIC_SLACK: f64 = 1e-9;

const STEEPNESS_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveKind {
    AOpt,
    WeightedAOpt,
    Transductive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignObjective {
    pub kind: ObjectiveKind,
    pub ridge: f64,
    /// Noise variance of the iid model; used by [`expected_mse`].
    pub sigma2: Option<f64>,
    /// `Sigma = P P^T / |U|` of the evaluation population (transductive kind).
    pub target_second_moment: Option<DMatrix<f64>>,
}

impl DesignObjective {
    pub fn a_opt(ridge: f64) -> Self {
        DesignObjective {
            kind: ObjectiveKind::AOpt,
            ridge,
            sigma2: None,
            target_second_moment: None,
        }
    }

    pub fn weighted(ridge: f64) -> Self {
        DesignObjective {
            kind: ObjectiveKind::WeightedAOpt,
            ..Self::a_opt(ridge)
        }
    }

    pub fn transductive(ridge: f64, second_moment: DMatrix<f64>) -> Self {
        DesignObjective {
            kind: ObjectiveKind::Transductive,
            target_second_moment: Some(second_moment),
            ..Self::a_opt(ridge)
        }
    }

    pub fn with_sigma2(mut self, sigma2: f64) -> Self {
        self.sigma2 = Some(sigma2);
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.ridge >= 0.0) {
            return Err(Error::invalid(format!("ridge must be >= 0, got {}", self.ridge)));
        }
        if let Some(s) = self.sigma2 {
            if !(s > 0.0) {
                return Err(Error::invalid(format!("sigma^2 must be > 0, got {s}")));
            }
        }
        if let Some(s) = &self.target_second_moment {
            if !s.is_square() {
                return Err(Error::invalid("second-moment matrix is not square"));
            }
            if (s - s.transpose()).amax() > 1e-10 * s.amax().max(1.0) {
                return Err(Error::invalid("second-moment matrix is not symmetric"));
            }
            let min_eig = s.clone().symmetric_eigen().eigenvalues.min();
            if min_eig < -1e-10 * s.amax().max(1.0) {
                return Err(Error::invalid("second-moment matrix is not positive semidefinite"));
            }
        }
        if self.kind == ObjectiveKind::Transductive && self.target_second_moment.is_none() {
            return Err(Error::MissingSecondMoment);
        }
        Ok(())
    }
}

/// Second moment `P P^T / n` of a `(k+1) x n` matrix of augmented vectors.
pub fn second_moment(vectors: &DMatrix<f64>) -> DMatrix<f64> {
    let n = vectors.ncols().max(1) as f64;
    (vectors * vectors.transpose()) / n
}

/// An objective bound to one pool, evaluated on pool positions.
pub(crate) struct BoundObjective<'a> {
    obj: &'a DesignObjective,
    pool: &'a RaterPool,
    weights: Option<Vec<f64>>,
}

impl<'a> BoundObjective<'a> {
    pub(crate) fn new(obj: &'a DesignObjective, pool: &'a RaterPool) -> Result<Self> {
        obj.validate()?;
        let weights = match obj.kind {
            ObjectiveKind::WeightedAOpt => Some(pool.weights().ok_or(Error::MissingVariances)?),
            _ => None,
        };
        if let Some(s) = &obj.target_second_moment {
            if s.nrows() != pool.order() {
                return Err(Error::invalid("second-moment order does not match the pool"));
            }
        }
        Ok(BoundObjective { obj, pool, weights })
    }

    pub(crate) fn value(&self, positions: &[usize]) -> Result<f64> {
        let cols = self.pool.columns(positions);
        let w: Option<Vec<f64>> = self
            .weights
            .as_ref()
            .map(|w| positions.iter().map(|&p| w[p]).collect());
        let m = gram(&cols, w.as_deref(), self.obj.ridge)?;
        let state = invert(&m).map_err(|_| Error::InsufficientDesign)?;
        Ok(match self.obj.kind {
            ObjectiveKind::Transductive => state.weighted_trace(
                self.obj
                    .target_second_moment
                    .as_ref()
                    .ok_or(Error::MissingSecondMoment)?,
            ),
            _ => state.trace_inv(),
        })
    }

    fn value_mask(&self, mask: u64) -> Result<f64> {
        self.value(&mask_positions(mask))
    }
}

fn mask_positions(mask: u64) -> Vec<usize> {
    (0..64).filter(|b| mask >> b & 1 == 1).collect()
}

fn full_mask(n: usize) -> u64 {
    if n == 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

/// Objective value of `subset` (user indices of `pool`).
pub fn objective_value(obj: &DesignObjective, pool: &RaterPool, subset: &[usize]) -> Result<f64> {
    let bound = BoundObjective::new(obj, pool)?;
    bound.value(&pool.positions(subset)?)
}

/// Expected MSE on an isotropic evaluation population.
///
/// * A-optimal: `sigma^2 * Trace(M^{-1}) + sigma^2` (needs `obj.sigma2`);
/// * weighted: `Trace(M_w^{-1}) + mean(eval_variances)`;
/// * transductive: `sigma^2 * Trace(Sigma M^{-1}) + sigma^2`.
pub fn expected_mse(obj: &DesignObjective, pool: &RaterPool, subset: &[usize], eval_variances: &[f64]) -> Result<f64> {
    let value = objective_value(obj, pool, subset)?;
    match obj.kind {
        ObjectiveKind::AOpt | ObjectiveKind::Transductive => {
            let s2 = obj.sigma2.ok_or(Error::MissingNoiseVariance)?;
            Ok(s2 * value + s2)
        }
        ObjectiveKind::WeightedAOpt => {
            if eval_variances.is_empty() {
                return Err(Error::invalid("no evaluation variances"));
            }
            let mean = eval_variances.iter().sum::<f64>() / eval_variances.len() as f64;
            Ok(value + mean)
        }
    }
}

/// `Phi` tabulated over every subset of a small pool (bit `j` = position `j`).
#[derive(Debug, Clone)]
pub struct PhiTable {
    n: usize,
    values: Vec<f64>,
}

impl PhiTable {
    pub fn new(obj: &DesignObjective, pool: &RaterPool) -> Result<Self> {
        let n = pool.len();
        if n > MAX_EXACT_POOL {
            return Err(Error::invalid(format!(
                "pool of {n} users is too large to tabulate (max {MAX_EXACT_POOL})"
            )));
        }
        if n == 0 {
            return Err(Error::DegeneratePool("empty pool".into()));
        }
        let bound = BoundObjective::new(obj, pool)?;
        let full = full_mask(n);
        let raw: Vec<f64> = (1..=full)
            .into_par_iter()
            .map(|mask| bound.value_mask(mask))
            .collect::<Result<_>>()?;
        let f_full = raw[(full - 1) as usize];
        let mut values = vec![0.0; (full + 1) as usize];
        for (i, v) in raw.iter().enumerate() {
            values[i + 1] = v - f_full;
        }
        values[full as usize] = 0.0;
        values[0] = extension_exact(n, &values);
        Ok(PhiTable { n, values })
    }

    pub fn pool_size(&self) -> usize {
        self.n
    }

    pub fn get(&self, mask: u64) -> f64 {
        self.values[mask as usize]
    }

    pub fn phi_empty(&self) -> f64 {
        self.values[0]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `Phi` of a set of pool positions.
    pub fn at(&self, positions: &[usize]) -> f64 {
        self.get(positions.iter().fold(0u64, |m, &p| m | 1 << p))
    }
}

/// `max Phi(A) + Phi(B) - Phi(A u B)` over disjoint nonempty `A`, `B`.
fn extension_exact(n: usize, values: &[f64]) -> f64 {
    let full = full_mask(n);
    (1..=full)
        .into_par_iter()
        .map(|union| {
            let mut best = f64::NEG_INFINITY;
            // proper nonempty submasks a of union, b = union \ a
            let mut a = (union - 1) & union;
            while a > 0 {
                let b = union & !a;
                let v = values[a as usize] + values[b as usize] - values[union as usize];
                if v > best {
                    best = v;
                }
                a = (a - 1) & union;
            }
            best
        })
        .reduce(|| f64::NEG_INFINITY, f64::max)
}

/// `Phi(empty)` for pools too large to enumerate: the extension restricted to
/// pairs `({x}, pool \ {x})`, i.e. `max_x Phi({x}) + Phi(pool \ {x})`. A lower
/// bound on the exact extension.
fn extension_singleton_complement(bound: &BoundObjective<'_>, n: usize, f_full: f64) -> Result<f64> {
    let all: Vec<usize> = (0..n).collect();
    let vals: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|x| {
            let single = bound.value(&[x])? - f_full;
            let rest: Vec<usize> = all.iter().copied().filter(|&p| p != x).collect();
            let comp = bound.value(&rest)? - f_full;
            Ok(single + comp)
        })
        .collect::<Result<_>>()?;
    Ok(vals.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

/// `Phi(subset)` for the unweighted A-optimal objective.
pub fn phi(pool: &RaterPool, subset: &[usize], ridge: f64) -> Result<f64> {
    phi_with(&DesignObjective::a_opt(ridge), pool, subset)
}

/// `Phi(subset)` for any objective kind.
pub fn phi_with(obj: &DesignObjective, pool: &RaterPool, subset: &[usize]) -> Result<f64> {
    let positions = pool.positions(subset)?;
    if positions.is_empty() {
        return phi_empty(obj, pool).map(|(v, _)| v);
    }
    let bound = BoundObjective::new(obj, pool)?;
    let all: Vec<usize> = (0..pool.len()).collect();
    let f_full = bound.value(&all)?;
    if positions.len() == pool.len() {
        return Ok(0.0);
    }
    Ok(bound.value(&positions)? - f_full)
}

/// `Phi(empty)` and whether it is exact.
pub fn phi_empty(obj: &DesignObjective, pool: &RaterPool) -> Result<(f64, bool)> {
    let n = pool.len();
    if n <= MAX_EXACT_POOL {
        return Ok((PhiTable::new(obj, pool)?.phi_empty(), true));
    }
    let bound = BoundObjective::new(obj, pool)?;
    let all: Vec<usize> = (0..n).collect();
    let f_full = bound.value(&all)?;
    Ok((extension_singleton_complement(&bound, n, f_full)?, false))
}

/// `(e^t - 1) / t`, with the `t -> 0` limit 1 and `+inf` on overflow.
pub fn approximation_factor(t: f64) -> f64 {
    if t.is_infinite() {
        return f64::INFINITY;
    }
    if t.abs() < 1e-12 {
        return 1.0;
    }
    t.exp_m1() / t
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteepnessReport {
    pub s: f64,
    /// `s / (1 - s)`; infinite when `s == 1`.
    pub t: f64,
    /// `(e^t - 1) / t`.
    pub factor: f64,
    pub phi_empty: f64,
    /// Exact extension, or the singleton/complement lower bound.
    pub phi_empty_exact: bool,
    pub argmax_user: usize,
}

/// Steepness of `Phi` for the unweighted A-optimal objective.
pub fn steepness(pool: &RaterPool, ridge: f64) -> Result<SteepnessReport> {
    steepness_with(&DesignObjective::a_opt(ridge), pool)
}

/// `s = max_x ([Phi(0) - Phi(x)] - [Phi(E \ x) - Phi(E)]) / [Phi(0) - Phi(x)]`.
pub fn steepness_with(obj: &DesignObjective, pool: &RaterPool) -> Result<SteepnessReport> {
    let n = pool.len();
    if n < 2 {
        return Err(Error::DegeneratePool("steepness needs at least two users".into()));
    }
    let (phi0, exact, singles, complements) = if n <= MAX_EXACT_POOL {
        let table = PhiTable::new(obj, pool)?;
        let full = full_mask(n);
        let singles: Vec<f64> = (0..n).map(|x| table.get(1 << x)).collect();
        let comps: Vec<f64> = (0..n).map(|x| table.get(full & !(1 << x))).collect();
        (table.phi_empty(), true, singles, comps)
    } else {
        let bound = BoundObjective::new(obj, pool)?;
        let all: Vec<usize> = (0..n).collect();
        let f_full = bound.value(&all)?;
        let pairs: Vec<(f64, f64)> = (0..n)
            .into_par_iter()
            .map(|x| {
                let rest: Vec<usize> = all.iter().copied().filter(|&p| p != x).collect();
                Ok((bound.value(&[x])? - f_full, bound.value(&rest)? - f_full))
            })
            .collect::<Result<_>>()?;
        let phi0 = pairs.iter().map(|(a, b)| a + b).fold(f64::NEG_INFINITY, f64::max);
        let (singles, comps) = pairs.into_iter().unzip();
        (phi0, false, singles, comps)
    };
    let mut best: Option<(f64, usize)> = None;
    for x in 0..n {
        let denom = phi0 - singles[x];
        if !(denom > STEEPNESS_GUARD) {
            return Err(Error::DegeneratePool(format!(
                "Phi(empty) - Phi({{{}}}) = {denom:e} is not positive",
                pool.users()[x]
            )));
        }
        let s = (denom - complements[x]) / denom;
        if best.is_none_or(|(b, _)| s > b) {
            best = Some((s, x));
        }
    }
    let (s, x) = best.expect("pool has at least two users");
    let t = if s >= 1.0 { f64::INFINITY } else { s / (1.0 - s) };
    Ok(SteepnessReport {
        s,
        t,
        factor: approximation_factor(t),
        phi_empty: phi0,
        phi_empty_exact: exact,
        argmax_user: pool.users()[x],
    })
}

/// A triple `(A, B, x)` with `A` a proper subset of `B` and `x` outside `B`,
/// as pool positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triple {
    pub a: Vec<usize>,
    pub b: Vec<usize>,
    pub x: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupermodularityReport {
    pub exhaustive: bool,
    pub triples_checked: u64,
    pub violations: u64,
    /// Largest `[f(A+x) - f(A)] - [f(B+x) - f(B)]` seen (positive = violation).
    pub max_excess: f64,
    pub worst: Option<Triple>,
}

impl SupermodularityReport {
    pub fn holds(&self) -> bool {
        self.violations == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonotonicityReport {
    pub pairs_checked: u64,
    pub violations: u64,
    /// Largest `f(S + x) - f(S)` seen (positive = violation).
    pub max_increase: f64,
}

impl MonotonicityReport {
    pub fn holds(&self) -> bool {
        self.violations == 0
    }
}

fn slack(values: &[f64]) -> f64 {
    DIAGNOSTIC_SLACK * values.iter().fold(1.0f64, |m, v| m.max(v.abs()))
}

#[derive(Clone)]
struct Acc {
    checked: u64,
    violations: u64,
    max_excess: f64,
    worst: Option<(u64, u64, usize)>,
}

impl Acc {
    fn empty() -> Self {
        Acc {
            checked: 0,
            violations: 0,
            max_excess: f64::NEG_INFINITY,
            worst: None,
        }
    }

    fn record(&mut self, excess: f64, violated: bool, key: (u64, u64, usize)) {
        self.checked += 1;
        if violated {
            self.violations += 1;
        }
        if excess > self.max_excess || (excess == self.max_excess && self.worst.is_some_and(|w| key < w)) {
            self.max_excess = excess;
            self.worst = Some(key);
        }
    }

    fn merge(mut self, other: Acc) -> Acc {
        self.checked += other.checked;
        self.violations += other.violations;
        let take = match (self.worst, other.worst) {
            (_, None) => false,
            (None, Some(_)) => true,
            (Some(a), Some(b)) => other.max_excess > self.max_excess || (other.max_excess == self.max_excess && b < a),
        };
        if take {
            self.max_excess = other.max_excess;
            self.worst = other.worst;
        }
        self
    }
}

/// Exhaustive supermodularity check of a set function tabulated by bitmask
/// over `n` elements: every `A` a proper subset of `B`, `x` outside `B` must
/// satisfy `f(A + x) - f(A) <= f(B + x) - f(B)` up to a relative slack.
pub fn check_supermodular_table(n: usize, f: &[f64]) -> SupermodularityReport {
    assert!(n < 64 && f.len() == 1usize << n, "table must have 2^n entries");
    let full = full_mask(n);
    let acc = (0..=full)
        .into_par_iter()
        .map(|b| {
            let mut acc = Acc::empty();
            for x in 0..n {
                let bit = 1u64 << x;
                if b & bit != 0 {
                    continue;
                }
                let gain_b = f[(b | bit) as usize] - f[b as usize];
                if b == 0 {
                    continue;
                }
                let mut a = (b - 1) & b;
                loop {
                    let fa = f[a as usize];
                    let fax = f[(a | bit) as usize];
                    let excess = (fax - fa) - gain_b;
                    let tol = slack(&[fa, fax, f[b as usize], f[(b | bit) as usize]]);
                    acc.record(excess, excess > tol, (b, a, x));
                    if a == 0 {
                        break;
                    }
                    a = (a - 1) & b;
                }
            }
            acc
        })
        .reduce(Acc::empty, Acc::merge);
    SupermodularityReport {
        exhaustive: true,
        triples_checked: acc.checked,
        violations: acc.violations,
        max_excess: acc.max_excess,
        worst: acc.worst.map(|(b, a, x)| Triple {
            a: mask_positions(a),
            b: mask_positions(b),
            x,
        }),
    }
}

/// Checks `f(S) >= f(S + x)` for every `S` and `x` outside `S`.
pub fn check_monotone_table(n: usize, f: &[f64]) -> MonotonicityReport {
    assert!(n < 64 && f.len() == 1usize << n, "table must have 2^n entries");
    let full = full_mask(n);
    let (checked, violations, max_increase) = (0..=full)
        .into_par_iter()
        .map(|s| {
            let mut out = (0u64, 0u64, f64::NEG_INFINITY);
            for x in 0..n {
                let bit = 1u64 << x;
                if s & bit != 0 {
                    continue;
                }
                let inc = f[(s | bit) as usize] - f[s as usize];
                out.0 += 1;
                if inc > slack(&[f[s as usize], f[(s | bit) as usize]]) {
                    out.1 += 1;
                }
                out.2 = out.2.max(inc);
            }
            out
        })
        .reduce(
            || (0, 0, f64::NEG_INFINITY),
            |a, b| (a.0 + b.0, a.1 + b.1, a.2.max(b.2)),
        );
    MonotonicityReport {
        pairs_checked: checked,
        violations,
        max_increase,
    }
}

/// Supermodularity of `Phi` (unweighted A-optimal) over a pool.
pub fn check_supermodular(pool: &RaterPool, ridge: f64, seed: u64) -> Result<SupermodularityReport> {
    check_supermodular_with(&DesignObjective::a_opt(ridge), pool, seed)
}

/// Exhaustive for pools up to [`MAX_EXACT_POOL`], otherwise
/// [`SAMPLED_TRIPLES`] random triples drawn with `seed`.
pub fn check_supermodular_with(obj: &DesignObjective, pool: &RaterPool, seed: u64) -> Result<SupermodularityReport> {
    let n = pool.len();
    if n <= MAX_EXACT_POOL {
        let table = PhiTable::new(obj, pool)?;
        return Ok(check_supermodular_table(n, table.values()));
    }
    let bound = BoundObjective::new(obj, pool)?;
    let mut rng = rng::seeded(seed);
    let mut triples = Vec::with_capacity(SAMPLED_TRIPLES);
    while triples.len() < SAMPLED_TRIPLES {
        let mut b = Vec::new();
        let mut outside = Vec::new();
        for p in 0..n {
            if rng.random_bool(0.5) {
                b.push(p)
            } else {
                outside.push(p)
            }
        }
        if b.is_empty() || outside.is_empty() {
            continue;
        }
        let x = outside[rng.random_range(0..outside.len())];
        let a: Vec<usize> = b.iter().copied().filter(|_| rng.random_bool(0.5)).collect();
        if a.len() == b.len() {
            continue;
        }
        triples.push(Triple { a, b, x });
    }
    // Phi(empty) is never needed: sampled A are evaluated directly and the
    // full-pool shift cancels in every difference.
    let evals: Vec<(f64, f64)> = triples
        .par_iter()
        .map(|t| {
            let eval = |s: &[usize]| -> Result<f64> {
                if s.is_empty() {
                    Ok(phi_empty(obj, pool)?.0)
                } else {
                    bound.value(s)
                }
            };
            let with = |s: &[usize]| {
                let mut v = s.to_vec();
                v.push(t.x);
                v
            };
            let (fa, fax) = (eval(&t.a)?, eval(&with(&t.a))?);
            let (fb, fbx) = (eval(&t.b)?, eval(&with(&t.b))?);
            let excess = (fax - fa) - (fbx - fb);
            Ok((excess, slack(&[fa, fax, fb, fbx])))
        })
        .collect::<Result<_>>()?;
    let mut report = SupermodularityReport {
        exhaustive: false,
        triples_checked: 0,
        violations: 0,
        max_excess: f64::NEG_INFINITY,
        worst: None,
    };
    for (t, (excess, tol)) in triples.into_iter().zip(evals) {
        report.triples_checked += 1;
        if excess > tol {
            report.violations += 1;
        }
        if excess > report.max_excess {
            report.max_excess = excess;
            report.worst = Some(t);
        }
    }
    Ok(report)
}

/// Monotonicity of `Phi` over every subset of a small pool.
pub fn check_monotone(obj: &DesignObjective, pool: &RaterPool) -> Result<MonotonicityReport> {
    let table = PhiTable::new(obj, pool)?;
    Ok(check_monotone_table(pool.len(), table.values()))
}
