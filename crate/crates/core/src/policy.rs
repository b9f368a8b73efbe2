use std::collections::HashMap;

use rand::Rng;

use crate::envs::Discretizer;
use crate::error::{OpeError, Result};
use crate::state::State;

/// State-conditional action distribution. Tabular tables index by state id;
/// greedy policies route feature states through a discretizer.
#[derive(Debug, Clone)]
pub enum Policy {
    Uniform { n_actions: usize },
    Tabular { probs: Vec<Vec<f64>> },
    Greedy(GreedyPolicy),
    Mixture { train: Box<Policy>, base: Box<Policy>, alpha: f64 },
}

/// Deterministic policy materialized as a map from abstract state key to the
/// chosen action. States missing from the map fall back to `default_action`.
#[derive(Debug, Clone)]
pub struct GreedyPolicy {
    pub actions: HashMap<Vec<i64>, usize>,
    pub discretizer: Option<Discretizer>,
    pub n_actions: usize,
    pub default_action: usize,
}

impl GreedyPolicy {
    pub fn key(&self, s: &State) -> Vec<i64> {
        match (s, &self.discretizer) {
            (State::Index(i), _) => vec![*i as i64],
            (State::Features(f), Some(d)) => d.key(f),
            (State::Features(f), None) => panic!(
                "greedy policy without a discretizer queried with feature state {f:?}"
            ),
        }
    }

    pub fn action(&self, s: &State) -> usize {
        *self.actions.get(&self.key(s)).unwrap_or(&self.default_action)
    }
}

impl Policy {
    pub fn uniform(n_actions: usize) -> Self {
        Policy::Uniform { n_actions }
    }

    pub fn tabular(probs: Vec<Vec<f64>>) -> Result<Self> {
        for (s, row) in probs.iter().enumerate() {
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > 1e-12 || row.iter().any(|&p| p < 0.0) {
                return Err(OpeError::InvalidPolicy(format!(
                    "action probabilities at state {s} sum to {total}"
                )));
            }
        }
        Ok(Policy::Tabular { probs })
    }

    /// Point-mass policy that always plays `action`.
    pub fn constant(action: usize, n_states: usize, n_actions: usize) -> Self {
        let mut probs = vec![vec![0.0; n_actions]; n_states];
        for row in &mut probs {
            row[action] = 1.0;
        }
        Policy::Tabular { probs }
    }

    pub fn n_actions(&self) -> usize {
        match self {
            Policy::Uniform { n_actions } => *n_actions,
            Policy::Tabular { probs } => probs[0].len(),
            Policy::Greedy(g) => g.n_actions,
            Policy::Mixture { train, .. } => train.n_actions(),
        }
    }

    pub fn prob(&self, s: &State, a: usize) -> f64 {
        match self {
            Policy::Uniform { n_actions } => 1.0 / *n_actions as f64,
            Policy::Tabular { probs } => {
                let i = s.expect_index();
                probs
                    .get(i)
                    .unwrap_or_else(|| panic!("tabular policy has no row for state {i}"))[a]
            }
            Policy::Greedy(g) => {
                if g.action(s) == a {
                    1.0
                } else {
                    0.0
                }
            }
            Policy::Mixture { train, base, alpha } => {
                (1.0 - alpha) * train.prob(s, a) + alpha * base.prob(s, a)
            }
        }
    }

    pub fn action_probs(&self, s: &State) -> Vec<f64> {
        (0..self.n_actions()).map(|a| self.prob(s, a)).collect()
    }

    pub fn sample(&self, s: &State, rng: &mut impl Rng) -> usize {
        let probs = self.action_probs(s);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (a, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return a;
            }
        }
        probs.len() - 1
    }
}

/// Mixture (1 - alpha) * pi_train + alpha * pi0.
pub fn mix_policies(pi_train: Policy, pi0: Policy, alpha: f64) -> Result<Policy> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(OpeError::InvalidArgument(format!(
            "mixture rate {alpha} outside [0,1]"
        )));
    }
    Ok(Policy::Mixture {
        train: Box::new(pi_train),
        base: Box::new(pi0),
        alpha,
    })
}
