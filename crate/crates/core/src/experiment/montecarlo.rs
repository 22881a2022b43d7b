//! Monte Carlo estimates of estimator error under the rating model.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::data::Scale;
use crate::estimators::{estimate, EstimatorKind, RevealedRatings};
use crate::lfm::{LatentModel, UserVariances};
use crate::{rng, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloSpec {
    pub estimator: EstimatorKind,
    pub ridge: f64,
    /// Like threshold of the similarity estimator.
    pub gamma: f64,
    pub trials: usize,
    pub seed: u64,
}

struct Simulation<'a> {
    truth: &'a LatentModel,
    noise: &'a UserVariances,
    spec: &'a MonteCarloSpec,
    subset: &'a [usize],
    vectors: DMatrix<f64>,
    /// Noise-free `r - b_v - mu` of each subset user.
    clean: Vec<f64>,
    theta: DVector<f64>,
}

impl<'a> Simulation<'a> {
    fn new(truth: &'a LatentModel, item: usize, subset: &'a [usize], noise: &'a UserVariances, spec: &'a MonteCarloSpec) -> Result<Self> {
        if spec.trials == 0 {
            return Err(Error::invalid("trials must be >= 1"));
        }
        if noise.len() != truth.n_users() {
            return Err(Error::invalid("noise variances do not cover the model's users"));
        }
        let theta = truth.item_parameters(item)?;
        let mut vectors = DMatrix::zeros(truth.k() + 1, subset.len());
        for (j, &u) in subset.iter().enumerate() {
            vectors.set_column(j, &truth.augment(u)?);
        }
        let clean = vectors.column_iter().map(|c| c.dot(&theta)).collect();
        Ok(Simulation {
            truth,
            noise,
            spec,
            subset,
            vectors,
            clean,
            theta,
        })
    }

    fn fit(&self, rng: &mut rng::Rng) -> Result<DVector<f64>> {
        let mut targets = Vec::with_capacity(self.subset.len());
        let mut raw = Vec::with_capacity(self.subset.len());
        for (j, &u) in self.subset.iter().enumerate() {
            let eps: f64 = StandardNormal.sample(rng);
            let t = self.clean[j] + eps * self.noise.values()[u].sqrt();
            targets.push(t);
            raw.push(t + self.truth.mu() + self.truth.user_bias(u)?);
        }
        let variances = (self.spec.estimator == EstimatorKind::Gls)
            .then(|| self.subset.iter().map(|&u| self.noise.values()[u]).collect());
        let revealed = RevealedRatings::new(self.subset.to_vec(), targets, self.vectors.clone(), variances)?;
        Ok(estimate(self.spec.estimator, &revealed, &raw, self.spec.ridge, self.spec.gamma)?.parameters())
    }
}

/// Average over `trials` of the MSE on `eval_users` after fitting the item
/// from fresh noisy ratings of `subset`.
///
/// Every trial redraws the noise of the revealed and of the evaluated ratings.
/// Trials run in parallel on independent streams and are summed in order.
pub fn monte_carlo_expected_mse(
    truth: &LatentModel,
    item: usize,
    subset: &[usize],
    eval_users: &[usize],
    noise: &UserVariances,
    spec: &MonteCarloSpec,
) -> Result<f64> {
    if eval_users.is_empty() {
        return Err(Error::invalid("no evaluation users"));
    }
    let sim = Simulation::new(truth, item, subset, noise, spec)?;
    let eval: Vec<(DVector<f64>, f64)> = eval_users
        .iter()
        .map(|&u| Ok((truth.augment(u)?, noise.get(u)?.sqrt())))
        .collect::<Result<_>>()?;
    let per_trial: Vec<f64> = (0..spec.trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = rng::stream(spec.seed, &[trial as u64]);
            let err = sim.fit(&mut rng)? - &sim.theta;
            let mut sse = 0.0;
            for (p, sigma) in &eval {
                let eps: f64 = StandardNormal.sample(&mut rng);
                let e = err.dot(p) - sigma * eps;
                sse += e * e;
            }
            Ok(sse / eval.len() as f64)
        })
        .collect::<Result<_>>()?;
    Ok(per_trial.iter().sum::<f64>() / spec.trials as f64)
}

/// Sample mean and standard error of the fitted `(b_i, Q_i)` across trials.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateMoments {
    pub truth: DVector<f64>,
    pub mean: DVector<f64>,
    pub standard_error: DVector<f64>,
}

impl EstimateMoments {
    /// `|mean - truth| / standard_error` per coordinate.
    pub fn z_scores(&self) -> DVector<f64> {
        (&self.mean - &self.truth).abs().component_div(&self.standard_error)
    }
}

pub fn monte_carlo_estimate_moments(
    truth: &LatentModel,
    item: usize,
    subset: &[usize],
    noise: &UserVariances,
    spec: &MonteCarloSpec,
) -> Result<EstimateMoments> {
    let sim = Simulation::new(truth, item, subset, noise, spec)?;
    let fits: Vec<DVector<f64>> = (0..spec.trials)
        .into_par_iter()
        .map(|trial| sim.fit(&mut rng::stream(spec.seed, &[trial as u64])))
        .collect::<Result<_>>()?;
    let n = fits.len() as f64;
    let d = sim.theta.len();
    let mut mean = DVector::zeros(d);
    for f in &fits {
        mean += f;
    }
    mean /= n;
    let mut var = DVector::zeros(d);
    for f in &fits {
        let c = f - &mean;
        var += c.component_mul(&c);
    }
    let denom = (n - 1.0).max(1.0);
    let standard_error = var.map(|v| (v / denom / n).sqrt());
    Ok(EstimateMoments {
        truth: sim.theta,
        mean,
        standard_error,
    })
}

/// Root mean squared error of `(predicted, actual)` pairs, optionally
/// clamping predictions to `clamp` first.
pub fn evaluate_rmse(pairs: &[(f64, f64)], clamp: Option<Scale>) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("no predictions to evaluate"));
    }
    let sse: f64 = pairs
        .iter()
        .map(|&(p, a)| {
            let p = clamp.map_or(p, |s| s.clamp(p));
            (p - a) * (p - a)
        })
        .sum();
    Ok((sse / pairs.len() as f64).sqrt())
}
