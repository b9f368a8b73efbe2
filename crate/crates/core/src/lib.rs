//! Off-policy value evaluation for finite-horizon MDPs.
//!
//! The crate provides the estimator family (importance sampling, weighted
//! importance sampling, model-based regression, doubly robust and its
//! variants), environments and synthetic MDP generators to exercise them,
//! model fitting, and exact theory checks (variance recursion, estimator
//! lower bounds, bias bounds) computable by enumeration on small MDPs.

pub mod enumeration;
pub mod envs;
pub mod error;
pub mod estimators;
pub mod fixtures;
pub mod mdp;
pub mod model;
pub mod numeric;
pub mod policy;
pub mod qfunction;
pub mod sampling;
pub mod state;
pub mod theory;
pub mod trajectory;

pub use error::{OpeError, Result};
pub use estimators::{
    confidence_bound, dr, dr_v2, evaluate, is_stepwise, is_stepwise_recursive, is_trajwise,
    is_trajwise_anchored, kfold_dr, reg_estimate, wis, BoundSpec, CIResult, Crop, EstimatorReport,
    EvalParams, Method,
};
pub use mdp::{exact_q, exact_value, RewardDist, TabularMDP};
pub use model::{
    constant_baseline_q, fit_factored_model, fit_tabular_model, kernel_q, optimal_policy,
    q_from_model, FittedModel, KernelQ, ModelQ,
};
pub use policy::{mix_policies, GreedyPolicy, Policy};
pub use qfunction::{ConstantQ, QFunction, TabularQ, TerminalZeroQ, ZeroQ};
pub use sampling::{monte_carlo_value, sample_dataset, sample_trajectory, Environment};
pub use state::State;
pub use theory::{
    cr_bound_dag, cr_bound_tree, dr_variance_exact, drv2_bias_bound, estimator_mse,
    model_l1_epsilon, MseReport, VarianceBreakdown,
};
pub use trajectory::{
    cumulative_ratios, load_dataset, save_dataset, Dataset, DatasetMeta, Step, Trajectory,
};
