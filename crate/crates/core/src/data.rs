//! Rating ingestion, dense id indices, item hold-out and rater pools.
//!
//! Two text formats are understood:
//!
//! * `csv`: `user,item,value[,timestamp]`, one rating per line. A header line is
//!   recognised by a non-numeric value field on the first line.
//! * `movielens`: `user::item::value::timestamp`.
//!
//! Identifiers are arbitrary strings and are reindexed densely from 0 in order
//! of first appearance. Missing timestamps become 0.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;

use crate::lfm::{LatentModel, UserVariances};
use crate::{rng, Error, Result};

/// Dense 0-based reindexing of string identifiers.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdIndex {
    ids: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl IdIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_ids<I, S>(ids: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut index = IdIndex::new();
        for id in ids {
            let id = id.into();
            if index.lookup.contains_key(&id) {
                return Err(Error::invalid(format!("duplicate identifier {id:?}")));
            }
            index.intern(&id);
        }
        Ok(index)
    }

    /// Index of `id`, inserting it if new.
    pub fn intern(&mut self, id: &str) -> usize {
        if let Some(&i) = self.lookup.get(id) {
            return i;
        }
        let i = self.ids.len();
        self.ids.push(id.to_owned());
        self.lookup.insert(id.to_owned(), i);
        i
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.lookup.get(id).copied()
    }

    pub fn id(&self, index: usize) -> &str {
        &self.ids[index]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Closed rating range `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scale {
    pub min: f64,
    pub max: f64,
}

impl Scale {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && min <= max) {
            return Err(Error::invalid(format!("invalid scale {min}:{max}")));
        }
        Ok(Scale { min, max })
    }

    pub fn contains(&self, value: f64) -> bool {
        value >= self.min && value <= self.max
    }

    pub fn clamp(&self, value: f64) -> f64 {
        value.clamp(self.min, self.max)
    }
}

impl Default for Scale {
    fn default() -> Self {
        Scale { min: 1.0, max: 5.0 }
    }
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (lo, hi) = s
            .split_once(':')
            .ok_or_else(|| Error::invalid(format!("scale {s:?} is not MIN:MAX")))?;
        let parse = |t: &str| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("scale {s:?} is not MIN:MAX")))
        };
        Scale::new(parse(lo)?, parse(hi)?)
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.min, self.max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatingFormat {
    Csv,
    MovieLens,
}

impl FromStr for RatingFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(RatingFormat::Csv),
            "movielens" | "ml" => Ok(RatingFormat::MovieLens),
            other => Err(Error::invalid(format!("unknown rating format {other:?}"))),
        }
    }
}

/// One observed rating. `user` and `item` index the owning dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rating {
    pub user: usize,
    pub item: usize,
    pub value: f64,
    pub timestamp: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatingDataset {
    ratings: Vec<Rating>,
    users: IdIndex,
    items: IdIndex,
    scale: Scale,
}

impl RatingDataset {
    /// Builds a dataset from `(user, item, value, timestamp)` records, rejecting
    /// duplicate pairs and values outside `scale`.
    pub fn from_records<I, U, T>(records: I, scale: Scale) -> Result<Self>
    where
        I: IntoIterator<Item = (U, T, f64, i64)>,
        U: AsRef<str>,
        T: AsRef<str>,
    {
        let mut builder = Builder::new(scale);
        for (n, (u, i, v, t)) in records.into_iter().enumerate() {
            builder.push(n + 1, u.as_ref(), i.as_ref(), v, t)?;
        }
        Ok(builder.finish())
    }

    pub fn ratings(&self) -> &[Rating] {
        &self.ratings
    }

    pub fn users(&self) -> &IdIndex {
        &self.users
    }

    pub fn items(&self) -> &IdIndex {
        &self.items
    }

    pub fn scale(&self) -> Scale {
        self.scale
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn len(&self) -> usize {
        self.ratings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratings.is_empty()
    }

    pub fn mean(&self) -> f64 {
        if self.ratings.is_empty() {
            return 0.0;
        }
        self.ratings.iter().map(|r| r.value).sum::<f64>() / self.ratings.len() as f64
    }

    /// Rating positions grouped by item index.
    pub fn by_item(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_items()];
        for (pos, r) in self.ratings.iter().enumerate() {
            out[r.item].push(pos);
        }
        out
    }

    /// Rating positions grouped by user index.
    pub fn by_user(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_users()];
        for (pos, r) in self.ratings.iter().enumerate() {
            out[r.user].push(pos);
        }
        out
    }

    /// Keeps ratings accepted by `keep`, reindexing users and items from scratch.
    pub fn filter(&self, mut keep: impl FnMut(&Rating) -> bool) -> RatingDataset {
        let mut builder = Builder::new(self.scale);
        for r in self.ratings.iter().filter(|r| keep(r)) {
            let u = builder.users.intern(self.users.id(r.user));
            let i = builder.items.intern(self.items.id(r.item));
            builder.ratings.push(Rating {
                user: u,
                item: i,
                ..*r
            });
        }
        builder.finish()
    }
}

struct Builder {
    ratings: Vec<Rating>,
    users: IdIndex,
    items: IdIndex,
    seen: HashSet<(usize, usize)>,
    scale: Scale,
}

impl Builder {
    fn new(scale: Scale) -> Self {
        Builder {
            ratings: Vec::new(),
            users: IdIndex::new(),
            items: IdIndex::new(),
            seen: HashSet::new(),
            scale,
        }
    }

    fn push(&mut self, line: usize, user: &str, item: &str, value: f64, timestamp: i64) -> Result<()> {
        if !self.scale.contains(value) {
            return Err(Error::OutOfScale {
                line,
                value,
                min: self.scale.min,
                max: self.scale.max,
            });
        }
        let u = self.users.intern(user);
        let i = self.items.intern(item);
        if !self.seen.insert((u, i)) {
            return Err(Error::DuplicateRating {
                user: user.to_owned(),
                item: item.to_owned(),
            });
        }
        self.ratings.push(Rating {
            user: u,
            item: i,
            value,
            timestamp,
        });
        Ok(())
    }

    fn finish(self) -> RatingDataset {
        RatingDataset {
            ratings: self.ratings,
            users: self.users,
            items: self.items,
            scale: self.scale,
        }
    }
}

pub fn load_ratings(path: impl AsRef<Path>, format: RatingFormat, scale: Scale) -> Result<RatingDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_ratings(BufReader::new(file), format, scale).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn parse_ratings<R: BufRead>(reader: R, format: RatingFormat, scale: Scale) -> Result<RatingDataset> {
    let mut builder = Builder::new(scale);
    for (n, line) in reader.lines().enumerate() {
        let lineno = n + 1;
        let line = line.map_err(|e| Error::io("<reader>", e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = match format {
            RatingFormat::Csv => line.split(',').map(str::trim).collect(),
            RatingFormat::MovieLens => line.split("::").map(str::trim).collect(),
        };
        let arity_ok = match format {
            RatingFormat::Csv => fields.len() == 3 || fields.len() == 4,
            RatingFormat::MovieLens => fields.len() == 4,
        };
        if !arity_ok {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected {} fields, found {}", expected_fields(format), fields.len()),
            });
        }
        let value = match fields[2].parse::<f64>() {
            Ok(v) if v.is_finite() => v,
            _ if lineno == 1 && format == RatingFormat::Csv && builder.ratings.is_empty() => continue,
            _ => {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("invalid rating value {:?}", fields[2]),
                })
            }
        };
        let timestamp = match fields.get(3) {
            Some(t) if !t.is_empty() => t.parse::<i64>().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("invalid timestamp {t:?}"),
            })?,
            _ => 0,
        };
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::Parse {
                line: lineno,
                message: "empty identifier".into(),
            });
        }
        builder.push(lineno, fields[0], fields[1], value, timestamp)?;
    }
    Ok(builder.finish())
}

fn expected_fields(format: RatingFormat) -> &'static str {
    match format {
        RatingFormat::Csv => "3 or 4",
        RatingFormat::MovieLens => "4",
    }
}

/// Writes every rating with its timestamp. Values use the shortest exact
/// decimal representation, so `parse_ratings` reproduces the dataset.
pub fn write_ratings<W: Write>(dataset: &RatingDataset, writer: W, format: RatingFormat) -> std::io::Result<()> {
    let mut w = BufWriter::new(writer);
    let sep = match format {
        RatingFormat::Csv => ",",
        RatingFormat::MovieLens => "::",
    };
    for r in &dataset.ratings {
        writeln!(
            w,
            "{}{sep}{}{sep}{}{sep}{}",
            dataset.users.id(r.user),
            dataset.items.id(r.item),
            r.value,
            r.timestamp
        )?;
    }
    w.flush()
}

pub fn save_ratings(dataset: &RatingDataset, path: impl AsRef<Path>, format: RatingFormat) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_ratings(dataset, file, format).map_err(|e| Error::io(path, e))
}

/// Result of holding out a set of items.
#[derive(Debug, Clone)]
pub struct ItemSplit {
    /// Ratings of the kept items, reindexed.
    pub train: RatingDataset,
    /// Ratings of the held-out items, reindexed.
    pub heldout: RatingDataset,
    /// Held-out item identifiers in selection order.
    pub new_items: Vec<String>,
}

/// Holds out `heldout_count` items chosen uniformly at random by `seed`.
pub fn split_items(dataset: &RatingDataset, heldout_count: usize, seed: u64) -> Result<ItemSplit> {
    if heldout_count >= dataset.n_items() {
        return Err(Error::invalid(format!(
            "cannot hold out {heldout_count} of {} items",
            dataset.n_items()
        )));
    }
    let mut rng = rng::seeded(seed);
    let mut order: Vec<usize> = (0..dataset.n_items()).collect();
    order.shuffle(&mut rng);
    order.truncate(heldout_count);
    let mut is_new = vec![false; dataset.n_items()];
    for &i in &order {
        is_new[i] = true;
    }
    let train = dataset.filter(|r| !is_new[r.item]);
    let heldout = dataset.filter(|r| is_new[r.item]);
    let new_items = order.iter().map(|&i| dataset.items.id(i).to_owned()).collect();
    Ok(ItemSplit {
        train,
        heldout,
        new_items,
    })
}

/// A rating of the pool's item. `user` indexes the latent model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservedRating {
    pub user: usize,
    pub value: f64,
    pub timestamp: i64,
}

/// What to do with raters the latent model does not know.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UnknownUsers {
    #[default]
    Reject,
    Skip,
}

/// Candidate raters for one new item.
///
/// Users are model indices in ascending order; column `j` of `vectors` is the
/// augmented vector `(1, P_u)` of `users[j]`.
#[derive(Debug, Clone)]
pub struct RaterPool {
    item: String,
    users: Vec<usize>,
    vectors: DMatrix<f64>,
    variances: Option<Vec<f64>>,
    ratings: Option<Vec<ObservedRating>>,
}

impl RaterPool {
    /// Pool over explicit vectors. Columns are reordered by ascending user.
    pub fn from_vectors(item: impl Into<String>, users: Vec<usize>, vectors: DMatrix<f64>) -> Result<Self> {
        if users.len() != vectors.ncols() {
            return Err(Error::invalid(format!(
                "{} users for {} vector columns",
                users.len(),
                vectors.ncols()
            )));
        }
        let mut perm: Vec<usize> = (0..users.len()).collect();
        perm.sort_by_key(|&j| users[j]);
        if perm.windows(2).any(|w| users[w[0]] == users[w[1]]) {
            return Err(Error::invalid("duplicate user in pool"));
        }
        let sorted_users = perm.iter().map(|&j| users[j]).collect();
        let vectors = vectors.select_columns(perm.iter());
        Ok(RaterPool {
            item: item.into(),
            users: sorted_users,
            vectors,
            variances: None,
            ratings: None,
        })
    }

    /// Pool over model users with their observed ratings of the item.
    pub fn from_ratings(item: impl Into<String>, model: &LatentModel, mut ratings: Vec<ObservedRating>) -> Result<Self> {
        ratings.sort_by_key(|r| r.user);
        if ratings.windows(2).any(|w| w[0].user == w[1].user) {
            return Err(Error::invalid("duplicate user in pool"));
        }
        let users: Vec<usize> = ratings.iter().map(|r| r.user).collect();
        let d = model.k() + 1;
        let mut vectors = DMatrix::zeros(d, users.len());
        for (j, &u) in users.iter().enumerate() {
            vectors.set_column(j, &model.augment(u)?);
        }
        Ok(RaterPool {
            item: item.into(),
            users,
            vectors,
            variances: None,
            ratings: Some(ratings),
        })
    }

    /// Attaches per-user variances taken from `variances` (model-indexed).
    pub fn with_variances(mut self, variances: &UserVariances) -> Result<Self> {
        let mut vals = Vec::with_capacity(self.users.len());
        for &u in &self.users {
            vals.push(variances.get(u)?);
        }
        self.variances = Some(vals);
        Ok(self)
    }

    /// Attaches explicit per-pool-position variances.
    pub fn with_variance_values(mut self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.users.len() {
            return Err(Error::invalid("variance count does not match pool size"));
        }
        if let Some(v) = values.iter().find(|v| !(**v > 0.0)) {
            return Err(Error::invalid(format!("variance {v} is not positive")));
        }
        self.variances = Some(values);
        Ok(self)
    }

    pub fn item(&self) -> &str {
        &self.item
    }

    pub fn users(&self) -> &[usize] {
        &self.users
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

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn vector(&self, position: usize) -> &[f64] {
        let d = self.order();
        &self.vectors.as_slice()[position * d..(position + 1) * d]
    }

    pub fn variances(&self) -> Option<&[f64]> {
        self.variances.as_deref()
    }

    pub fn ratings(&self) -> Option<&[ObservedRating]> {
        self.ratings.as_deref()
    }

    /// Inverse-variance weights, when variances are attached.
    pub fn weights(&self) -> Option<Vec<f64>> {
        self.variances
            .as_ref()
            .map(|v| v.iter().map(|s| 1.0 / s).collect())
    }

    pub fn position(&self, user: usize) -> Option<usize> {
        self.users.binary_search(&user).ok()
    }

    /// Pool positions of `subset`, rejecting users outside the pool and repeats.
    pub fn positions(&self, subset: &[usize]) -> Result<Vec<usize>> {
        let mut seen = HashSet::with_capacity(subset.len());
        subset
            .iter()
            .map(|&u| {
                let p = self.position(u).ok_or(Error::NotInPool(u))?;
                if !seen.insert(p) {
                    return Err(Error::invalid(format!("user {u} repeated in subset")));
                }
                Ok(p)
            })
            .collect()
    }

    /// Vectors of the given pool positions, as columns.
    pub fn columns(&self, positions: &[usize]) -> DMatrix<f64> {
        self.vectors.select_columns(positions.iter())
    }

    /// Keeps only the given positions (in ascending position order).
    pub fn restrict(&self, positions: &[usize]) -> RaterPool {
        let mut pos = positions.to_vec();
        pos.sort_unstable();
        pos.dedup();
        RaterPool {
            item: self.item.clone(),
            users: pos.iter().map(|&p| self.users[p]).collect(),
            vectors: self.vectors.select_columns(pos.iter()),
            variances: self
                .variances
                .as_ref()
                .map(|v| pos.iter().map(|&p| v[p]).collect()),
            ratings: self
                .ratings
                .as_ref()
                .map(|r| pos.iter().map(|&p| r[p]).collect()),
        }
    }
}

/// Builds the pool of users who rated `item` in `dataset`.
///
/// Raters are mapped to model users by identifier. With
/// [`UnknownUsers::Skip`], raters missing from the model are left out; with
/// [`UnknownUsers::Reject`] they are an error.
pub fn rater_pool(dataset: &RatingDataset, model: &LatentModel, item: &str, unknown: UnknownUsers) -> Result<RaterPool> {
    let item_idx = dataset
        .items
        .get(item)
        .ok_or_else(|| Error::UnknownItem(item.to_owned()))?;
    let mut observed = Vec::new();
    for r in dataset.ratings.iter().filter(|r| r.item == item_idx) {
        let id = dataset.users.id(r.user);
        match model.users().get(id) {
            Some(u) => observed.push(ObservedRating {
                user: u,
                value: r.value,
                timestamp: r.timestamp,
            }),
            None if unknown == UnknownUsers::Skip => {}
            None => return Err(Error::UnknownUser(id.to_owned())),
        }
    }
    if observed.is_empty() {
        return Err(Error::EmptyPool { item: item.to_owned() });
    }
    RaterPool::from_ratings(item, model, observed)
}

/// Revealed ratings and the evaluation remainder for one selection.
#[derive(Debug, Clone, Default)]
pub struct Reveal {
    pub revealed: Vec<ObservedRating>,
    pub remainder: Vec<ObservedRating>,
}

/// Splits the pool's ratings into those of `subset` and everyone else.
pub fn reveal(pool: &RaterPool, subset: &[usize]) -> Result<Reveal> {
    let ratings = pool
        .ratings()
        .ok_or_else(|| Error::invalid("pool carries no ratings to reveal"))?;
    let positions = pool.positions(subset)?;
    let mut chosen = vec![false; pool.len()];
    for &p in &positions {
        chosen[p] = true;
    }
    let revealed = positions.iter().map(|&p| ratings[p]).collect();
    let remainder = ratings
        .iter()
        .zip(&chosen)
        .filter(|(_, &c)| !c)
        .map(|(r, _)| *r)
        .collect();
    Ok(Reveal { revealed, remainder })
}

/// Rating count and population variance per model user, from training data.
#[derive(Debug, Clone)]
pub struct UserStats {
    pub counts: Vec<usize>,
    pub variances: Vec<f64>,
}

impl UserStats {
    pub fn from_dataset(train: &RatingDataset, model: &LatentModel) -> Self {
        let n = model.n_users();
        let mut counts = vec![0usize; n];
        let mut sum = vec![0.0; n];
        let mut sumsq = vec![0.0; n];
        let map = model_user_map(train, model);
        for r in &train.ratings {
            if let Some(u) = map[r.user] {
                counts[u] += 1;
                sum[u] += r.value;
                sumsq[u] += r.value * r.value;
            }
        }
        let variances = (0..n)
            .map(|u| {
                if counts[u] < 2 {
                    0.0
                } else {
                    let c = counts[u] as f64;
                    let mean = sum[u] / c;
                    (sumsq[u] / c - mean * mean).max(0.0)
                }
            })
            .collect();
        UserStats { counts, variances }
    }
}

/// For each dataset user, the model user with the same identifier.
pub fn model_user_map(dataset: &RatingDataset, model: &LatentModel) -> Vec<Option<usize>> {
    dataset
        .users
        .ids()
        .iter()
        .map(|id| model.users().get(id))
        .collect()
}

/// For each dataset item, the model item with the same identifier.
pub fn model_item_map(dataset: &RatingDataset, model: &LatentModel) -> Vec<Option<usize>> {
    dataset
        .items
        .ids()
        .iter()
        .map(|id| model.items().get(id))
        .collect()
}
