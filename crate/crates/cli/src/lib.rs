//! Benchmark driver for the off-policy evaluation library: configuration
//! parsing, the accuracy and safe-improvement experiments, dataset
//! generation, and the enumeration-based theory check.

pub mod config;
pub mod experiment;
pub mod safe;
pub mod theory_check;

pub use config::{parse_key_values, Config, Objective};
pub use experiment::{
    build_env, fit_env_model, ground_truth, run_rmse_experiment, BuiltEnv, RmseRow, RMSE_HEADER,
};
pub use safe::{run_safe_improvement, SafeRow, SAFE_HEADER};
pub use theory_check::run_theory_check;
