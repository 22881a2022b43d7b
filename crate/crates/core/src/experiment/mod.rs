//! Synthetic ground truth, Monte Carlo oracles, RMSE evaluation and budget sweeps.

pub mod config;
pub mod montecarlo;
pub mod sweep;
pub mod synth;

pub use config::{load_sweep_config, parse_sweep_config, SweepFile};
pub use montecarlo::{evaluate_rmse, monte_carlo_estimate_moments, monte_carlo_expected_mse, EstimateMoments, MonteCarloSpec};
pub use sweep::{
    run_sweep, thread_pool, write_csv, CsvPrecision, MethodSpec, SweepConfig, SweepInput, SweepOptions, SweepRow, CSV_HEADER, THREADS_ENV,
};
pub use synth::{generate_synthetic, NoiseModel, SyntheticConfig, SyntheticData};
