//! Ratings drawn from a known latent factor model.

use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, Uniform};

use crate::data::{IdIndex, RatingDataset, Scale};
use crate::lfm::{LatentModel, UserVariances};
use crate::numerics::whiten;
use crate::{rng, Error, Result};

/// Rating noise of the generated data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel {
    /// Every rating gets `N(0, sigma^2)` noise.
    Iid { sigma: f64 },
    /// User `u` draws `sigma_u ~ U[sigma_min, sigma_max]` once.
    PerUser { sigma_min: f64, sigma_max: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub k: usize,
    pub raters_per_item: usize,
    pub noise: NoiseModel,
    /// Standard deviation of every latent factor coordinate.
    pub factor_scale: f64,
    /// Center and whiten the user factors so that `P' P'^T = n I`.
    pub isotropic: bool,
    /// Round ratings to integers on the 1-5 scale.
    pub quantize: bool,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_users: 1000,
            n_items: 200,
            k: 5,
            raters_per_item: 100,
            noise: NoiseModel::Iid { sigma: 0.5 },
            factor_scale: 0.3,
            isotropic: false,
            quantize: false,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 || self.n_items == 0 || self.k == 0 || self.raters_per_item == 0 {
            return Err(Error::invalid("synthetic counts must all be >= 1"));
        }
        if self.raters_per_item > self.n_users {
            return Err(Error::invalid(format!(
                "raters_per_item {} exceeds n_users {}",
                self.raters_per_item, self.n_users
            )));
        }
        match self.noise {
            NoiseModel::Iid { sigma } if !(sigma > 0.0 && sigma.is_finite()) => {
                return Err(Error::invalid(format!("sigma must be > 0, got {sigma}")));
            }
            NoiseModel::PerUser { sigma_min, sigma_max } if !(sigma_min > 0.0 && sigma_max >= sigma_min && sigma_max.is_finite()) => {
                return Err(Error::invalid(format!("invalid sigma range [{sigma_min}, {sigma_max}]")));
            }
            _ => {}
        }
        if !(self.factor_scale > 0.0 && self.factor_scale.is_finite()) {
            return Err(Error::invalid("factor_scale must be > 0"));
        }
        if self.isotropic && self.n_users <= self.k {
            return Err(Error::invalid("isotropic population needs more users than factors"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: RatingDataset,
    pub truth: LatentModel,
    /// Noise variance `sigma_u^2` of every user.
    pub true_variances: UserVariances,
}

const STREAM_PARAMETERS: u64 = 0;
const STREAM_ITEMS: u64 = 1;

/// Draws a model and `raters_per_item` distinct noisy ratings per item.
///
/// `mu ~ U[3, 4]`, biases `~ U(-0.5, 0.5)`, factor coordinates
/// `~ N(0, factor_scale^2)`. User and item identifiers are `u<index>` and
/// `i<index>`. Unquantized ratings are stored on a scale covering their range.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticData> {
    config.validate()?;
    let (n, m, k) = (config.n_users, config.n_items, config.k);
    let mut rng = rng::stream(config.seed, &[STREAM_PARAMETERS]);
    let bias = Uniform::new(-0.5, 0.5).expect("valid range");
    let factor = Normal::new(0.0, config.factor_scale).expect("valid scale");

    let mu = rng.random_range(3.0..4.0);
    let user_bias: Vec<f64> = (0..n).map(|_| bias.sample(&mut rng)).collect();
    let item_bias: Vec<f64> = (0..m).map(|_| bias.sample(&mut rng)).collect();
    let mut user_factors = DMatrix::from_fn(k, n, |_, _| factor.sample(&mut rng));
    let item_factors = DMatrix::from_fn(k, m, |_, _| factor.sample(&mut rng));
    if config.isotropic {
        for mut row in user_factors.row_iter_mut() {
            let mean = row.mean();
            row.add_scalar_mut(-mean);
        }
        user_factors = whiten(&user_factors)?.whitened;
    }

    let sigmas: Vec<f64> = match config.noise {
        NoiseModel::Iid { sigma } => vec![sigma; n],
        NoiseModel::PerUser { sigma_min, sigma_max } => {
            if sigma_min == sigma_max {
                vec![sigma_min; n]
            } else {
                (0..n).map(|_| rng.random_range(sigma_min..sigma_max)).collect()
            }
        }
    };

    let users = IdIndex::from_ids((0..n).map(|u| format!("u{u}")))?;
    let items = IdIndex::from_ids((0..m).map(|i| format!("i{i}")))?;
    let truth = LatentModel::new(mu, user_bias, item_bias, user_factors, item_factors, users, items)?;

    let mut records = Vec::with_capacity(m * config.raters_per_item);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let quantized = Scale::default();
    for i in 0..m {
        let mut rng = rng::stream(config.seed, &[STREAM_ITEMS, i as u64]);
        let mut raters = index::sample(&mut rng, n, config.raters_per_item).into_vec();
        raters.sort_unstable();
        for u in raters {
            let noise = Normal::new(0.0, sigmas[u]).expect("positive sigma").sample(&mut rng);
            let mut value = truth.predict_unchecked(u, i) + noise;
            if config.quantize {
                value = quantized.clamp(value.round());
            }
            lo = lo.min(value);
            hi = hi.max(value);
            let timestamp = rng.random_range(0..1_000_000_000i64);
            records.push((format!("u{u}"), format!("i{i}"), value, timestamp));
        }
    }
    let scale = if config.quantize {
        quantized
    } else {
        Scale::new(lo.floor(), hi.ceil())?
    };
    let dataset = RatingDataset::from_records(records, scale)?;
    let true_variances = UserVariances::new(sigmas.iter().map(|s| s * s).collect(), f64::MIN_POSITIVE)?;
    Ok(SyntheticData {
        dataset,
        truth,
        true_variances,
    })
}
