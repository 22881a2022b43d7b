use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: rating {value} outside declared scale [{min}, {max}]")]
    OutOfScale {
        line: usize,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("duplicate rating for user {user:?} on item {item:?}")]
    DuplicateRating { user: String, item: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown user {0:?}")]
    UnknownUser(String),

    #[error("unknown item {0:?}")]
    UnknownItem(String),

    #[error("{kind} index {index} out of range (size {size})")]
    IndexOutOfRange {
        kind: &'static str,
        index: usize,
        size: usize,
    },

    #[error("item {item:?} has no raters")]
    EmptyPool { item: String },

    #[error("user {0} is not in the rater pool")]
    NotInPool(usize),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Diverged { epoch: usize },

    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },

    #[error("rank-one removal would make the design singular")]
    RemovalForbidden,

    #[error("insufficient design: the normal equations are singular")]
    InsufficientDesign,

    #[error("per-user variances are required but missing")]
    MissingVariances,

    #[error("transductive objective requires a target second-moment matrix")]
    MissingSecondMoment,

    #[error("iid expected-MSE formula requires a noise variance")]
    MissingNoiseVariance,

    #[error("brute force would enumerate {count} subsets (limit {limit})")]
    CombinatorialGuard { count: u128, limit: u128 },

    #[error("greedy elimination collapsed the design at step {step}")]
    RankCollapse { step: usize },

    #[error("degenerate pool: {0}")]
    DegeneratePool(String),

    #[error("model file line {line}: {message}")]
    ModelFormat { line: usize, message: String },

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
