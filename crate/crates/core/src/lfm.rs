//! Latent factor model `r_ui ~ mu + b_i + b_u + Q_i . P_u`.
//!
//! The model plays the role of ground truth for the cold-start machinery: user
//! biases and factors are taken as known, and only the new item's parameters
//! are estimated. [`train_lfm`] fits it with SGD using AdaGrad-style
//! per-parameter step sizes.
//!
//! # Text format
//!
//! ```text
//! coldstart-lfm 1
//! k <k>
//! mu <mu>
//! users <n>
//! <user-id> <b_u> <P_u[0]> ... <P_u[k-1]>      (n lines)
//! items <m>
//! <item-id> <b_i> <Q_i[0]> ... <Q_i[k-1]>      (m lines)
//! ```
//!
//! Fields are separated by single spaces; identifiers may not contain
//! whitespace. Floats are written with 17 significant digits, so a save/load
//! round trip is exact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, DVectorView};
use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::data::{model_item_map, model_user_map, IdIndex, RatingDataset};
use crate::{rng, Error, Result};

pub const MODEL_MAGIC: &str = "coldstart-lfm";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct LatentModel {
    mu: f64,
    user_bias: Vec<f64>,
    item_bias: Vec<f64>,
    /// k x n
    user_factors: DMatrix<f64>,
    /// k x m
    item_factors: DMatrix<f64>,
    users: IdIndex,
    items: IdIndex,
}

impl LatentModel {
    pub fn new(
        mu: f64,
        user_bias: Vec<f64>,
        item_bias: Vec<f64>,
        user_factors: DMatrix<f64>,
        item_factors: DMatrix<f64>,
        users: IdIndex,
        items: IdIndex,
    ) -> Result<Self> {
        let k = user_factors.nrows();
        if k == 0 {
            return Err(Error::invalid("latent dimension must be >= 1"));
        }
        if item_factors.nrows() != k {
            return Err(Error::invalid("user and item factor dimensions differ"));
        }
        let n = user_factors.ncols();
        let m = item_factors.ncols();
        if n == 0 || m == 0 {
            return Err(Error::invalid("model needs at least one user and one item"));
        }
        if user_bias.len() != n || users.len() != n {
            return Err(Error::invalid("user bias/factor/id counts differ"));
        }
        if item_bias.len() != m || items.len() != m {
            return Err(Error::invalid("item bias/factor/id counts differ"));
        }
        let finite = mu.is_finite()
            && user_bias.iter().chain(&item_bias).all(|x| x.is_finite())
            && user_factors.iter().chain(item_factors.iter()).all(|x| x.is_finite());
        if !finite {
            return Err(Error::invalid("model contains non-finite parameters"));
        }
        Ok(LatentModel {
            mu,
            user_bias,
            item_bias,
            user_factors,
            item_factors,
            users,
            items,
        })
    }

    pub fn k(&self) -> usize {
        self.user_factors.nrows()
    }

    pub fn n_users(&self) -> usize {
        self.user_factors.ncols()
    }

    pub fn n_items(&self) -> usize {
        self.item_factors.ncols()
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn users(&self) -> &IdIndex {
        &self.users
    }

    pub fn items(&self) -> &IdIndex {
        &self.items
    }

    pub fn user_factors(&self) -> &DMatrix<f64> {
        &self.user_factors
    }

    pub fn item_factors(&self) -> &DMatrix<f64> {
        &self.item_factors
    }

    fn check_user(&self, user: usize) -> Result<()> {
        if user >= self.n_users() {
            return Err(Error::IndexOutOfRange {
                kind: "user",
                index: user,
                size: self.n_users(),
            });
        }
        Ok(())
    }

    fn check_item(&self, item: usize) -> Result<()> {
        if item >= self.n_items() {
            return Err(Error::IndexOutOfRange {
                kind: "item",
                index: item,
                size: self.n_items(),
            });
        }
        Ok(())
    }

    pub fn user_bias(&self, user: usize) -> Result<f64> {
        self.check_user(user)?;
        Ok(self.user_bias[user])
    }

    pub fn item_bias(&self, item: usize) -> Result<f64> {
        self.check_item(item)?;
        Ok(self.item_bias[item])
    }

    pub fn user_factor(&self, user: usize) -> Result<DVectorView<'_, f64>> {
        self.check_user(user)?;
        Ok(self.user_factors.column(user).into())
    }

    pub fn item_factor(&self, item: usize) -> Result<DVectorView<'_, f64>> {
        self.check_item(item)?;
        Ok(self.item_factors.column(item).into())
    }

    /// `mu + b_i + b_u + Q_i . P_u`, unclamped.
    pub fn predict(&self, user: usize, item: usize) -> Result<f64> {
        self.check_user(user)?;
        self.check_item(item)?;
        Ok(self.predict_unchecked(user, item))
    }

    pub(crate) fn predict_unchecked(&self, user: usize, item: usize) -> f64 {
        self.mu
            + self.item_bias[item]
            + self.user_bias[user]
            + self.item_factors.column(item).dot(&self.user_factors.column(user))
    }

    /// The augmented user vector `(1, P_u)`.
    pub fn augment(&self, user: usize) -> Result<DVector<f64>> {
        self.check_user(user)?;
        let k = self.k();
        let mut v = DVector::zeros(k + 1);
        v[0] = 1.0;
        v.rows_mut(1, k).copy_from(&self.user_factors.column(user));
        Ok(v)
    }

    /// The item's parameters as one `(k+1)`-vector `(b_i, Q_i)`.
    pub fn item_parameters(&self, item: usize) -> Result<DVector<f64>> {
        self.check_item(item)?;
        let k = self.k();
        let mut v = DVector::zeros(k + 1);
        v[0] = self.item_bias[item];
        v.rows_mut(1, k).copy_from(&self.item_factors.column(item));
        Ok(v)
    }

    /// Augmented vectors of all users as a `(k+1) x n` matrix.
    pub fn augmented_users(&self) -> DMatrix<f64> {
        let k = self.k();
        let n = self.n_users();
        let mut out = DMatrix::zeros(k + 1, n);
        out.row_mut(0).fill(1.0);
        out.rows_mut(1, k).copy_from(&self.user_factors);
        out
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        let io = |e| Error::io("<model writer>", e);
        let mut w = BufWriter::new(writer);
        writeln!(w, "{MODEL_MAGIC} {MODEL_VERSION}").map_err(io)?;
        writeln!(w, "k {}", self.k()).map_err(io)?;
        writeln!(w, "mu {}", fmt_exact(self.mu)).map_err(io)?;
        write_block(&mut w, "users", &self.users, &self.user_bias, &self.user_factors)?;
        write_block(&mut w, "items", &self.items, &self.item_bias, &self.item_factors)?;
        w.flush().map_err(io)
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines().enumerate().map(|(n, l)| {
            l.map(|l| (n + 1, l))
                .map_err(|e| Error::io("<model reader>", e))
        });
        let mut next = |what: &str| -> Result<(usize, String)> {
            lines.next().unwrap_or_else(|| {
                Err(Error::ModelFormat {
                    line: 0,
                    message: format!("unexpected end of file, expected {what}"),
                })
            })
        };
        let (line, header) = next("header")?;
        let expected = format!("{MODEL_MAGIC} {MODEL_VERSION}");
        if header.trim() != expected {
            return Err(Error::ModelFormat {
                line,
                message: format!("expected header {expected:?}"),
            });
        }
        let k: usize = keyed(next("k")?, "k")?;
        if k == 0 {
            return Err(Error::ModelFormat {
                line: 2,
                message: "k must be >= 1".into(),
            });
        }
        let mu: f64 = keyed(next("mu")?, "mu")?;
        let n: usize = keyed(next("users")?, "users")?;
        let (users, user_bias, user_factors) = read_block(&mut next, n, k)?;
        let m: usize = keyed(next("items")?, "items")?;
        let (items, item_bias, item_factors) = read_block(&mut next, m, k)?;
        LatentModel::new(mu, user_bias, item_bias, user_factors, item_factors, users, items)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write(f)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        LatentModel::read(BufReader::new(f))
    }
}

fn fmt_exact(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_block<W: Write>(w: &mut W, tag: &str, ids: &IdIndex, bias: &[f64], factors: &DMatrix<f64>) -> Result<()> {
    let io = |e| Error::io("<model writer>", e);
    writeln!(w, "{tag} {}", ids.len()).map_err(io)?;
    for (j, id) in ids.ids().iter().enumerate() {
        if id.is_empty() || id.chars().any(char::is_whitespace) {
            return Err(Error::invalid(format!(
                "identifier {id:?} cannot be written to a model file"
            )));
        }
        write!(w, "{id} {}", fmt_exact(bias[j])).map_err(io)?;
        for x in factors.column(j).iter() {
            write!(w, " {}", fmt_exact(*x)).map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    Ok(())
}

fn keyed<T: std::str::FromStr>((line, text): (usize, String), key: &str) -> Result<T> {
    let mut parts = text.split_whitespace();
    match (parts.next(), parts.next(), parts.next()) {
        (Some(k), Some(v), None) if k == key => v.parse().map_err(|_| Error::ModelFormat {
            line,
            message: format!("invalid value for {key}"),
        }),
        _ => Err(Error::ModelFormat {
            line,
            message: format!("expected `{key} <value>`"),
        }),
    }
}

fn read_block(
    next: &mut impl FnMut(&str) -> Result<(usize, String)>,
    count: usize,
    k: usize,
) -> Result<(IdIndex, Vec<f64>, DMatrix<f64>)> {
    let mut ids = IdIndex::new();
    let mut bias = Vec::with_capacity(count);
    let mut factors = DMatrix::zeros(k, count);
    for j in 0..count {
        let (line, text) = next("parameter row")?;
        let fields: Vec<&str> = text.split(' ').collect();
        if fields.len() != k + 2 {
            return Err(Error::ModelFormat {
                line,
                message: format!("expected {} fields, found {}", k + 2, fields.len()),
            });
        }
        if ids.get(fields[0]).is_some() {
            return Err(Error::ModelFormat {
                line,
                message: format!("duplicate identifier {:?}", fields[0]),
            });
        }
        ids.intern(fields[0]);
        let parse = |s: &str| {
            s.parse::<f64>().map_err(|_| Error::ModelFormat {
                line,
                message: format!("invalid number {s:?}"),
            })
        };
        bias.push(parse(fields[1])?);
        for (r, f) in fields[2..].iter().enumerate() {
            factors[(r, j)] = parse(f)?;
        }
    }
    Ok((ids, bias, factors))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub k: usize,
    pub epochs: usize,
    pub base_learning_rate: f64,
    pub l2_penalty: f64,
    pub seed: u64,
    pub accumulator_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 20,
            epochs: 30,
            base_learning_rate: 0.05,
            l2_penalty: 0.02,
            seed: 0,
            accumulator_epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("k must be >= 1"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if !(self.base_learning_rate > 0.0) {
            return Err(Error::invalid("base learning rate must be > 0"));
        }
        if !(self.l2_penalty >= 0.0) {
            return Err(Error::invalid("l2 penalty must be >= 0"));
        }
        if !(self.accumulator_epsilon > 0.0) {
            return Err(Error::invalid("accumulator epsilon must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: LatentModel,
    /// Training RMSE after each epoch.
    pub epoch_rmse: Vec<f64>,
}

/// Fits the model by SGD over shuffled ratings.
///
/// Every parameter keeps its own squared-gradient accumulator `G` and moves by
/// `base_learning_rate * g / sqrt(G + eps)`. `mu` is fixed at the data mean.
/// Single-threaded, so a fixed seed gives a bit-identical model.
pub fn train_lfm(train: &RatingDataset, config: &TrainConfig) -> Result<TrainedModel> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let k = config.k;
    let n = train.n_users();
    let m = train.n_items();
    let mut rng = rng::seeded(config.seed);
    let bound = 0.5 / (k as f64).sqrt();
    let mut p = DMatrix::from_fn(k, n, |_, _| rng.random_range(-bound..bound));
    let mut q = DMatrix::from_fn(k, m, |_, _| rng.random_range(-bound..bound));
    let mut bu = vec![0.0; n];
    let mut bi = vec![0.0; m];
    let mut acc_p = DMatrix::<f64>::zeros(k, n);
    let mut acc_q = DMatrix::<f64>::zeros(k, m);
    let mut acc_bu = vec![0.0; n];
    let mut acc_bi = vec![0.0; m];
    let mu = train.mean();
    let lr = config.base_learning_rate;
    let l2 = config.l2_penalty;
    let eps = config.accumulator_epsilon;

    let ratings = train.ratings();
    let mut order: Vec<usize> = (0..ratings.len()).collect();
    let mut epoch_rmse = Vec::with_capacity(config.epochs);
    let mut gp = vec![0.0; k];
    let mut gq = vec![0.0; k];
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for &idx in &order {
            let r = ratings[idx];
            let (u, i) = (r.user, r.item);
            let pred = mu + bu[u] + bi[i] + p.column(u).dot(&q.column(i));
            let err = r.value - pred;

            let g = -err + l2 * bu[u];
            acc_bu[u] += g * g;
            bu[u] -= lr * g / (acc_bu[u] + eps).sqrt();
            let g = -err + l2 * bi[i];
            acc_bi[i] += g * g;
            bi[i] -= lr * g / (acc_bi[i] + eps).sqrt();

            for f in 0..k {
                gp[f] = -err * q[(f, i)] + l2 * p[(f, u)];
                gq[f] = -err * p[(f, u)] + l2 * q[(f, i)];
            }
            for f in 0..k {
                acc_p[(f, u)] += gp[f] * gp[f];
                p[(f, u)] -= lr * gp[f] / (acc_p[(f, u)] + eps).sqrt();
                acc_q[(f, i)] += gq[f] * gq[f];
                q[(f, i)] -= lr * gq[f] / (acc_q[(f, i)] + eps).sqrt();
            }
        }
        let sse: f64 = ratings
            .iter()
            .map(|r| {
                let e = r.value - (mu + bu[r.user] + bi[r.item] + p.column(r.user).dot(&q.column(r.item)));
                e * e
            })
            .sum();
        let rmse = (sse / ratings.len() as f64).sqrt();
        if !rmse.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        log::debug!("epoch {epoch}: train rmse {rmse:.6}");
        epoch_rmse.push(rmse);
    }
    let model = LatentModel::new(mu, bu, bi, p, q, train.users().clone(), train.items().clone())?;
    Ok(TrainedModel { model, epoch_rmse })
}

/// Per-user noise variances `sigma_u^2`, indexed by model user, all `>= floor`.
#[derive(Debug, Clone, PartialEq)]
pub struct UserVariances {
    values: Vec<f64>,
    floor: f64,
}

impl UserVariances {
    /// Values below `floor` are raised to it.
    pub fn new(values: Vec<f64>, floor: f64) -> Result<Self> {
        if !(floor > 0.0) {
            return Err(Error::invalid(format!("variance floor must be > 0, got {floor}")));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::invalid("variance is NaN"));
        }
        let values = values.into_iter().map(|v| v.max(floor)).collect();
        Ok(UserVariances { values, floor })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, user: usize) -> Result<f64> {
        self.values.get(user).copied().ok_or(Error::IndexOutOfRange {
            kind: "user",
            index: user,
            size: self.values.len(),
        })
    }
}

pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-4;
pub const DEFAULT_MIN_RATINGS: usize = 20;

/// Mean squared residual of each user's training ratings under `model`.
///
/// Users with fewer than `min_ratings` ratings get the global mean squared
/// residual. Ratings whose user or item the model does not know are ignored.
pub fn estimate_user_variances(
    model: &LatentModel,
    train: &RatingDataset,
    floor: f64,
    min_ratings: usize,
) -> Result<UserVariances> {
    if !(floor > 0.0) {
        return Err(Error::invalid(format!("variance floor must be > 0, got {floor}")));
    }
    let umap = model_user_map(train, model);
    let imap = model_item_map(train, model);
    let n = model.n_users();
    let mut sse = vec![0.0; n];
    let mut count = vec![0usize; n];
    let mut total = 0.0;
    let mut total_count = 0usize;
    for r in train.ratings() {
        if let (Some(u), Some(i)) = (umap[r.user], imap[r.item]) {
            let e = r.value - model.predict_unchecked(u, i);
            sse[u] += e * e;
            count[u] += 1;
            total += e * e;
            total_count += 1;
        }
    }
    let global = if total_count > 0 {
        total / total_count as f64
    } else {
        floor
    };
    let values = (0..n)
        .map(|u| {
            if count[u] >= min_ratings.max(1) {
                sse[u] / count[u] as f64
            } else {
                global
            }
        })
        .collect();
    UserVariances::new(values, floor)
}
