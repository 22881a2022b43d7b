//! Budget-constrained item cold-start handling for latent factor recommenders.
//!
//! Given a trained latent factor model and the pool of users available to rate a
//! new item, the crate picks `B` raters whose ratings make the item's latent
//! parameters most estimable (A-optimal design, solved by backward greedy
//! elimination), estimates those parameters from the revealed ratings and measures
//! the resulting prediction error against a set of baselines.
//!
//! Module map:
//!
//! * [`data`]: rating files, dense id indices, item hold-out, rater pools.
//! * [`lfm`]: the latent factor model, its SGD trainer and per-user noise variances.
//! * [`numerics`]: small dense SPD algebra with rank-one inverse maintenance.
//! * [`estimators`]: least squares, generalized least squares and similarity estimators.
//! * [`design`]: design objectives, expected-MSE formulas and set-function diagnostics.
//! * [`selection`]: backward greedy selection and the baseline selectors.
//! * [`experiment`]: synthetic ground truth, Monte Carlo oracles and budget sweeps.

pub mod data;
pub mod design;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod lfm;
pub mod numerics;
pub mod selection;

mod rng;

pub use error::{Error, Result};
