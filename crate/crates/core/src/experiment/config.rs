//! Sweep configuration files.
//!
//! A TOML document:
//!
//! ```toml
//! budgets = [5, 10, 20, 40]   # strictly ascending
//! items = 100                 # new items evaluated
//! repeats = 50                # runs averaged for seed-dependent methods
//! seed = 7
//!
//! [[method]]
//! name = "bgs2"               # bgs1 bgs2 forward_greedy cluster random frequent edgy early_birds brute_force
//!
//! [[method]]
//! name = "random"
//! estimator = "similarity"    # ls gls similarity; default gls for bgs2, ls otherwise
//! label = "random-sim"        # optional output name
//!
//! [options]                   # all optional
//! selection_ridge = 1e-5
//! estimation_ridge = 0.1
//! gamma = 4.0
//! clamp = false
//! true_variances = false
//! cluster_mode = "one_per_cluster"   # or "proportional"
//! clusters = 3
//! thinning_cap = 20000
//! timing = false
//!
//! [synthetic]                 # optional; generate data instead of reading it
//! n_users = 1000
//! n_items = 200
//! k = 10
//! raters_per_item = 400
//! sigma = 0.5                 # iid noise, or
//! sigma_range = [0.2, 0.8]    # per-user noise
//! factor_scale = 0.3
//! isotropic = false
//! quantize = false
//! seed = 1
//! ```

use std::path::Path;

use serde::Deserialize;

use crate::experiment::synth::{NoiseModel, SyntheticConfig};
use crate::experiment::sweep::{MethodSpec, SweepConfig, SweepOptions};
use crate::{Error, Result};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    budgets: Vec<usize>,
    items: usize,
    #[serde(default = "one")]
    repeats: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default, rename = "method")]
    methods: Vec<RawMethod>,
    #[serde(default)]
    options: RawOptions,
    synthetic: Option<RawSynthetic>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMethod {
    name: String,
    estimator: Option<String>,
    label: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOptions {
    selection_ridge: Option<f64>,
    estimation_ridge: Option<f64>,
    gamma: Option<f64>,
    clamp: Option<bool>,
    true_variances: Option<bool>,
    cluster_mode: Option<String>,
    clusters: Option<usize>,
    thinning_cap: Option<usize>,
    timing: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSynthetic {
    n_users: usize,
    n_items: usize,
    k: usize,
    raters_per_item: usize,
    sigma: Option<f64>,
    sigma_range: Option<[f64; 2]>,
    factor_scale: Option<f64>,
    isotropic: Option<bool>,
    quantize: Option<bool>,
    seed: Option<u64>,
}

/// A parsed sweep file.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepFile {
    pub sweep: SweepConfig,
    pub synthetic: Option<SyntheticConfig>,
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

pub fn parse_sweep_config(text: &str) -> Result<SweepFile> {
    let raw: RawConfig = toml::from_str(text).map_err(config_err)?;
    let methods = raw
        .methods
        .iter()
        .map(|m| {
            let method = m.name.parse().map_err(config_err)?;
            let mut spec = match &m.estimator {
                Some(e) => MethodSpec::with_estimator(method, e.parse().map_err(config_err)?),
                None => MethodSpec::new(method),
            };
            if let Some(label) = &m.label {
                if label.contains(',') || label.contains('\n') {
                    return Err(Error::Config(format!("label {label:?} cannot contain commas or newlines")));
                }
                spec.label = label.clone();
            }
            Ok(spec)
        })
        .collect::<Result<Vec<_>>>()?;
    let defaults = SweepOptions::default();
    let o = raw.options;
    let options = SweepOptions {
        selection_ridge: o.selection_ridge,
        estimation_ridge: o.estimation_ridge,
        gamma: o.gamma.unwrap_or(defaults.gamma),
        clamp: o.clamp.unwrap_or(defaults.clamp),
        true_variances: o.true_variances.unwrap_or(defaults.true_variances),
        cluster_mode: match o.cluster_mode {
            Some(m) => m.parse().map_err(config_err)?,
            None => defaults.cluster_mode,
        },
        clusters: o.clusters,
        thinning_cap: o.thinning_cap.unwrap_or(defaults.thinning_cap),
        timing: o.timing.unwrap_or(defaults.timing),
    };
    for (name, v) in [("selection_ridge", options.selection_ridge), ("estimation_ridge", options.estimation_ridge)] {
        if let Some(v) = v {
            if !(v >= 0.0) {
                return Err(Error::Config(format!("{name} must be >= 0")));
            }
        }
    }
    let sweep = SweepConfig {
        budgets: raw.budgets,
        methods,
        items: raw.items,
        repeats: raw.repeats,
        seed: raw.seed,
        options,
    };
    sweep.validate()?;
    let synthetic = raw.synthetic.map(|s| synthetic_from_raw(s, raw.seed)).transpose()?;
    Ok(SweepFile { sweep, synthetic })
}

fn synthetic_from_raw(s: RawSynthetic, seed: u64) -> Result<SyntheticConfig> {
    let defaults = SyntheticConfig::default();
    let noise = match (s.sigma, s.sigma_range) {
        (Some(sigma), None) => NoiseModel::Iid { sigma },
        (None, Some([lo, hi])) => NoiseModel::PerUser {
            sigma_min: lo,
            sigma_max: hi,
        },
        (None, None) => defaults.noise,
        (Some(_), Some(_)) => return Err(Error::Config("give either sigma or sigma_range, not both".into())),
    };
    let config = SyntheticConfig {
        n_users: s.n_users,
        n_items: s.n_items,
        k: s.k,
        raters_per_item: s.raters_per_item,
        noise,
        factor_scale: s.factor_scale.unwrap_or(defaults.factor_scale),
        isotropic: s.isotropic.unwrap_or(defaults.isotropic),
        quantize: s.quantize.unwrap_or(defaults.quantize),
        seed: s.seed.unwrap_or(seed),
    };
    config.validate()?;
    Ok(config)
}

pub fn load_sweep_config(path: impl AsRef<Path>) -> Result<SweepFile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_sweep_config(&text)
}
