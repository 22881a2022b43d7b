//! Estimating a new item's `(b_i, Q_i)` from revealed ratings.
//!
//! Each revealed rating is a linear observation of the item parameters:
//! `r_vi - b_v - mu = (1, P_v) . (b_i, Q_i) + noise`. Least squares solves
//! the (ridged) normal equations; generalized least squares weights every
//! equation by `1 / sigma_v^2`. The similarity estimator is the classic
//! "average the likers" baseline.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::data::ObservedRating;
use crate::lfm::{LatentModel, UserVariances};
use crate::numerics::{cholesky, cholesky_solve, gram};
use crate::{Error, Result};

/// Like threshold for the similarity estimator on a 1-5 scale.
pub const DEFAULT_GAMMA: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorKind {
    LeastSquares,
    Gls,
    Similarity,
}

impl EstimatorKind {
    pub fn tag(self) -> &'static str {
        match self {
            EstimatorKind::LeastSquares => "ls",
            EstimatorKind::Gls => "gls",
            EstimatorKind::Similarity => "similarity",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ls" | "least_squares" => Ok(EstimatorKind::LeastSquares),
            "gls" => Ok(EstimatorKind::Gls),
            "similarity" | "sim" => Ok(EstimatorKind::Similarity),
            other => Err(Error::invalid(format!("unknown estimator {other:?}"))),
        }
    }
}

/// Estimated `(b_i, Q_i)` of a new item.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemEstimate {
    pub bias: f64,
    pub factors: DVector<f64>,
    pub method: EstimatorKind,
}

impl ItemEstimate {
    /// From a concatenated `(b_i, Q_i)` vector.
    pub fn from_parameters(params: &DVector<f64>, method: EstimatorKind) -> Self {
        ItemEstimate {
            bias: params[0],
            factors: params.rows(1, params.len() - 1).into_owned(),
            method,
        }
    }

    pub fn parameters(&self) -> DVector<f64> {
        let k = self.factors.len();
        let mut v = DVector::zeros(k + 1);
        v[0] = self.bias;
        v.rows_mut(1, k).copy_from(&self.factors);
        v
    }
}

/// Revealed ratings in regression form.
///
/// `targets[j] = r_vi - b_v - mu` and column `j` of `vectors` is `(1, P_v)`
/// for `users[j]`.
#[derive(Debug, Clone)]
pub struct RevealedRatings {
    users: Vec<usize>,
    targets: Vec<f64>,
    vectors: DMatrix<f64>,
    variances: Option<Vec<f64>>,
}

impl RevealedRatings {
    pub fn new(users: Vec<usize>, targets: Vec<f64>, vectors: DMatrix<f64>, variances: Option<Vec<f64>>) -> Result<Self> {
        if targets.len() != users.len() || vectors.ncols() != users.len() {
            return Err(Error::invalid(format!(
                "revealed ratings disagree in length: {} users, {} targets, {} vectors",
                users.len(),
                targets.len(),
                vectors.ncols()
            )));
        }
        if let Some(v) = &variances {
            if v.len() != users.len() {
                return Err(Error::invalid("variance count does not match revealed ratings"));
            }
            if let Some(bad) = v.iter().find(|s| !(**s > 0.0)) {
                return Err(Error::invalid(format!("variance {bad} is not positive")));
            }
        }
        Ok(RevealedRatings {
            users,
            targets,
            vectors,
            variances,
        })
    }

    /// Converts raw ratings into targets using the model's `mu` and user biases.
    pub fn from_observed(model: &LatentModel, ratings: &[ObservedRating], variances: Option<&UserVariances>) -> Result<Self> {
        let d = model.k() + 1;
        let mut vectors = DMatrix::zeros(d, ratings.len());
        let mut users = Vec::with_capacity(ratings.len());
        let mut targets = Vec::with_capacity(ratings.len());
        for (j, r) in ratings.iter().enumerate() {
            vectors.set_column(j, &model.augment(r.user)?);
            users.push(r.user);
            targets.push(r.value - model.user_bias(r.user)? - model.mu());
        }
        let variances = match variances {
            Some(v) => Some(ratings.iter().map(|r| v.get(r.user)).collect::<Result<Vec<_>>>()?),
            None => None,
        };
        RevealedRatings::new(users, targets, vectors, variances)
    }

    pub fn users(&self) -> &[usize] {
        &self.users
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn variances(&self) -> Option<&[f64]> {
        self.variances.as_deref()
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn order(&self) -> usize {
        self.vectors.nrows()
    }
}

/// Ridge for estimation with `budget` raters at latent dimension `k`.
pub fn default_estimation_ridge(budget: usize, k: usize) -> f64 {
    if budget < 2 * (k + 1) {
        0.1
    } else {
        1e-6 * (k + 1) as f64
    }
}

fn solve_weighted(revealed: &RevealedRatings, weights: Option<&[f64]>, ridge: f64, method: EstimatorKind) -> Result<ItemEstimate> {
    if revealed.is_empty() && !(ridge > 0.0) {
        return Err(Error::InsufficientDesign);
    }
    let m = gram(&revealed.vectors, weights, ridge)?;
    let l = cholesky(&m).map_err(|_| Error::InsufficientDesign)?;
    let d = revealed.order();
    let mut rhs = DVector::zeros(d);
    for (j, col) in revealed.vectors.column_iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[j]);
        rhs.axpy(w * revealed.targets[j], &col, 1.0);
    }
    let x = cholesky_solve(&l, &rhs);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InsufficientDesign);
    }
    Ok(ItemEstimate::from_parameters(&x, method))
}

/// `(ridge I + sum_v P'_v P'_v^T)^{-1} sum_v t_v P'_v`.
pub fn least_squares_estimate(revealed: &RevealedRatings, ridge: f64) -> Result<ItemEstimate> {
    solve_weighted(revealed, None, ridge, EstimatorKind::LeastSquares)
}

/// `(ridge I + P_B C^{-2} P_B^T)^{-1} P_B C^{-2} r_B`.
///
/// The ridge is added after variance weighting.
pub fn gls_estimate(revealed: &RevealedRatings, ridge: f64) -> Result<ItemEstimate> {
    let variances = revealed.variances().ok_or(Error::MissingVariances)?;
    let weights: Vec<f64> = variances.iter().map(|s| 1.0 / s).collect();
    solve_weighted(revealed, Some(&weights), ridge, EstimatorKind::Gls)
}

/// Bias from the mean offset of all raters, factors from the mean vector of
/// raters with `raw >= gamma`. With no such rater the factors are zero.
pub fn similarity_estimate(revealed: &RevealedRatings, raw_ratings: &[f64], gamma: f64) -> Result<ItemEstimate> {
    if revealed.is_empty() {
        return Err(Error::invalid("similarity estimate needs at least one rating"));
    }
    if raw_ratings.len() != revealed.len() {
        return Err(Error::invalid("raw rating count does not match revealed ratings"));
    }
    let b = revealed.len() as f64;
    let bias = revealed.targets.iter().sum::<f64>() / b;
    let k = revealed.order() - 1;
    let mut factors = DVector::zeros(k);
    let mut liked = 0usize;
    for (j, &r) in raw_ratings.iter().enumerate() {
        if r >= gamma {
            factors += revealed.vectors.column(j).rows(1, k);
            liked += 1;
        }
    }
    if liked > 0 {
        factors /= liked as f64;
    }
    Ok(ItemEstimate {
        bias,
        factors,
        method: EstimatorKind::Similarity,
    })
}

/// Dispatches on `kind`; `raw_ratings` is only read by the similarity estimator.
pub fn estimate(kind: EstimatorKind, revealed: &RevealedRatings, raw_ratings: &[f64], ridge: f64, gamma: f64) -> Result<ItemEstimate> {
    match kind {
        EstimatorKind::LeastSquares => least_squares_estimate(revealed, ridge),
        EstimatorKind::Gls => gls_estimate(revealed, ridge),
        EstimatorKind::Similarity => similarity_estimate(revealed, raw_ratings, gamma),
    }
}

/// `mu + b~_i + b_u + Q~_i . P_u`.
pub fn predict_new_item(model: &LatentModel, estimate: &ItemEstimate, user: usize) -> Result<f64> {
    let p = model.user_factor(user)?;
    if p.len() != estimate.factors.len() {
        return Err(Error::invalid("estimate dimension does not match the model"));
    }
    Ok(model.mu() + estimate.bias + model.user_bias(user)? + estimate.factors.dot(&p))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_least_squares() {
        // bias-only regression: one rater, target r - b_v - mu
        let r = RevealedRatings::new(vec![0], vec![0.7], DMatrix::from_element(1, 1, 1.0), None).unwrap();
        let e = least_squares_estimate(&r, 0.0).unwrap();
        assert!((e.bias - 0.7).abs() < 1e-15);
        assert_eq!(e.factors.len(), 0);
    }

    #[test]
    fn singular_design_is_reported() {
        let v = DMatrix::from_column_slice(3, 2, &[1.0, 0.5, 0.5, 1.0, 0.5, 0.5]);
        let r = RevealedRatings::new(vec![0, 1], vec![1.0, 2.0], v, None).unwrap();
        assert!(matches!(least_squares_estimate(&r, 0.0), Err(Error::InsufficientDesign)));
        assert!(least_squares_estimate(&r, 0.1).is_ok());
    }

    #[test]
    fn gls_requires_variances() {
        let r = RevealedRatings::new(vec![0], vec![1.0], DMatrix::from_element(1, 1, 1.0), None).unwrap();
        assert!(matches!(gls_estimate(&r, 0.0), Err(Error::MissingVariances)));
    }

    #[test]
    fn similarity_singleton_and_fallback() {
        let v = DMatrix::from_column_slice(3, 1, &[1.0, 0.4, -0.2]);
        let r = RevealedRatings::new(vec![4], vec![1.1], v.clone(), None).unwrap();
        let e = similarity_estimate(&r, &[5.0], 4.0).unwrap();
        assert!((e.bias - 1.1).abs() < 1e-15);
        assert_eq!(e.factors.as_slice(), &[0.4, -0.2]);

        let e = similarity_estimate(&r, &[2.0], 4.0).unwrap();
        assert_eq!(e.factors.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let v = DMatrix::from_element(2, 2, 1.0);
        assert!(RevealedRatings::new(vec![0], vec![1.0, 2.0], v.clone(), None).is_err());
        assert!(RevealedRatings::new(vec![0, 1], vec![1.0, 2.0], v, Some(vec![1.0])).is_err());
    }

    #[test]
    fn estimator_tags_parse() {
        for k in [EstimatorKind::LeastSquares, EstimatorKind::Gls, EstimatorKind::Similarity] {
            assert_eq!(k.tag().parse::<EstimatorKind>().unwrap(), k);
        }
    }

    #[test]
    fn ridge_defaults() {
        assert_eq!(default_estimation_ridge(5, 3), 0.1);
        assert!((default_estimation_ridge(8, 3) - 4e-6).abs() < 1e-18);
    }
}
