//! Model learning: tabular MLE, kernel averaging, factored fits, planning.

mod baseline;
mod factored;
mod fitted;
mod kernel;

pub use baseline::constant_baseline_q;
pub use factored::fit_factored_model;
pub use fitted::{fit_tabular_model, optimal_policy, q_from_model, FittedModel, ModelQ};
pub use kernel::{kernel_q, KernelQ, KERNEL_PARTICLES};
