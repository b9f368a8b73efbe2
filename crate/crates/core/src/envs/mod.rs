//! Concrete environments, synthetic MDP generators, and state aggregation.

mod discretize;
mod generators;
mod mountain_car;
mod sailing;
mod structure;

pub use discretize::{discretize, Discretizer};
pub use generators::{
    factored_decode, factored_encode, make_factored_sim, make_random_dag_mdp,
    make_random_tree_mdp,
};
pub use mountain_car::{make_mountain_car, MountainCar, POSITION_MAX, POSITION_MIN, VELOCITY_MAX};
pub use sailing::{direction_gap, make_sailing, Sailing, SAILING_R_MIN};
pub use structure::{layered_reachability, relabel_policy, unroll_to_tree, verify_tree};
