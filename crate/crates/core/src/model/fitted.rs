use std::collections::HashMap;

use crate::envs::Discretizer;
use crate::error::{OpeError, Result};
use crate::mdp::TabularMDP;
use crate::policy::{GreedyPolicy, Policy};
use crate::qfunction::QFunction;
use crate::state::State;
use crate::trajectory::Dataset;

/// Maximum-likelihood tabular model over abstract states. Unseen
/// state-action pairs get the reward floor and a self-loop.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub mdp: TabularMDP,
    pub keys: Vec<Vec<i64>>,
    pub index: HashMap<Vec<i64>, usize>,
    pub discretizer: Option<Discretizer>,
    pub seen: Vec<Vec<bool>>,
    pub reward_floor: f64,
    /// Set when a factored reward regression was singular and fell back to
    /// the mean observed reward.
    pub regression_fallback: bool,
}

impl FittedModel {
    pub fn state_key(&self, s: &State) -> Vec<i64> {
        match (s, &self.discretizer) {
            (State::Index(i), _) => vec![*i as i64],
            (State::Features(f), Some(d)) => d.key(f),
            (State::Features(f), None) => {
                panic!("model without a discretizer queried with feature state {f:?}")
            }
        }
    }

    pub fn state_index(&self, s: &State) -> Option<usize> {
        self.index.get(&self.state_key(s)).copied()
    }

    /// Estimated mean reward; the floor for states never seen in the data.
    pub fn reward(&self, s: &State, a: usize) -> f64 {
        match self.state_index(s) {
            Some(i) => self.mdp.mean_reward[i][a],
            None => self.reward_floor,
        }
    }

    /// A representative concrete state for abstract index `i`, suitable for
    /// querying policies defined on the original state space.
    pub fn representative(&self, i: usize) -> State {
        match &self.discretizer {
            Some(d) => State::Features(d.representative(&self.keys[i])),
            None => State::Index(self.keys[i][0] as usize),
        }
    }

    /// Wrap an exact tabular MDP as a fitted model (P-hat = P, R-hat = R).
    pub fn from_tabular(mdp: &TabularMDP) -> Self {
        let keys: Vec<Vec<i64>> = (0..mdp.n_states).map(|s| vec![s as i64]).collect();
        let index = keys.iter().cloned().zip(0..mdp.n_states).collect();
        let (r_min, _) = mdp.reward_range();
        FittedModel {
            mdp: mdp.clone(),
            keys,
            index,
            discretizer: None,
            seen: vec![vec![true; mdp.n_actions]; mdp.n_states],
            reward_floor: r_min,
            regression_fallback: false,
        }
    }
}

fn normalize_row(row: &mut [f64]) {
    let total: f64 = row.iter().sum();
    if total > 0.0 {
        for x in row.iter_mut() {
            *x /= total;
        }
        let drift = 1.0 - row.iter().sum::<f64>();
        let arg = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap();
        row[arg] += drift;
    }
}

/// Tabular MLE over discretized states: transition counts normalized to
/// probabilities, rewards averaged, unseen pairs floored with a self-loop.
pub fn fit_tabular_model(
    dataset: &Dataset,
    discretizer: Option<Discretizer>,
    reward_floor: f64,
    gamma: f64,
    n_actions: usize,
) -> Result<FittedModel> {
    let key_of = |s: &State| -> Vec<i64> {
        match (s, &discretizer) {
            (State::Index(i), _) => vec![*i as i64],
            (State::Features(f), Some(d)) => d.key(f),
            (State::Features(f), None) => {
                panic!("fit_tabular_model needs a discretizer for feature state {f:?}")
            }
        }
    };

    let mut index: HashMap<Vec<i64>, usize> = HashMap::new();
    let mut keys: Vec<Vec<i64>> = Vec::new();
    let intern = |key: Vec<i64>, keys: &mut Vec<Vec<i64>>, index: &mut HashMap<Vec<i64>, usize>| {
        *index.entry(key.clone()).or_insert_with(|| {
            keys.push(key);
            keys.len() - 1
        })
    };

    // (s, a) -> (next-state counts, reward sum, visit count)
    let mut transitions: Vec<(usize, usize, usize, f64)> = Vec::new();
    let mut initial_counts: HashMap<usize, usize> = HashMap::new();
    for traj in &dataset.trajectories {
        let first = intern(key_of(&traj.steps[0].state), &mut keys, &mut index);
        *initial_counts.entry(first).or_insert(0) += 1;
        for t in 0..traj.steps.len() {
            let step = &traj.steps[t];
            let s = intern(key_of(&step.state), &mut keys, &mut index);
            let next_state = traj.state_at(t + 2);
            let s2 = intern(key_of(next_state), &mut keys, &mut index);
            transitions.push((s, step.action, s2, step.reward));
        }
    }

    let n_states = keys.len();
    let mut counts = vec![vec![HashMap::<usize, usize>::new(); n_actions]; n_states];
    let mut reward_sum = vec![vec![0.0; n_actions]; n_states];
    let mut visits = vec![vec![0usize; n_actions]; n_states];
    for (s, a, s2, r) in transitions {
        if a >= n_actions {
            return Err(OpeError::InvalidArgument(format!(
                "action {a} outside the declared {n_actions} actions"
            )));
        }
        *counts[s][a].entry(s2).or_insert(0) += 1;
        reward_sum[s][a] += r;
        visits[s][a] += 1;
    }

    let mut transition = vec![vec![vec![0.0; n_states]; n_actions]; n_states];
    let mut mean_reward = vec![vec![0.0; n_actions]; n_states];
    let mut seen = vec![vec![false; n_actions]; n_states];
    for s in 0..n_states {
        for a in 0..n_actions {
            if visits[s][a] == 0 {
                transition[s][a][s] = 1.0;
                mean_reward[s][a] = reward_floor;
            } else {
                seen[s][a] = true;
                for (&s2, &c) in &counts[s][a] {
                    transition[s][a][s2] = c as f64;
                }
                normalize_row(&mut transition[s][a]);
                mean_reward[s][a] = reward_sum[s][a] / visits[s][a] as f64;
            }
        }
    }

    let mut initial_dist = vec![0.0; n_states];
    for (&s, &c) in &initial_counts {
        initial_dist[s] = c as f64;
    }
    normalize_row(&mut initial_dist);

    let mdp = TabularMDP::new(
        format!("fit_{}", dataset.meta.env_id),
        transition,
        mean_reward,
        None,
        initial_dist,
        gamma,
        dataset.horizon,
        vec![false; n_states],
    )?;
    Ok(FittedModel {
        mdp,
        keys,
        index,
        discretizer,
        seen,
        reward_floor,
        regression_fallback: false,
    })
}

/// Q-value estimate from finite-horizon Bellman backups on a fitted model.
/// States outside the model's learned index get the self-loop floor value.
#[derive(Debug, Clone)]
pub struct ModelQ {
    table: Vec<Vec<Vec<f64>>>,
    index: HashMap<Vec<i64>, usize>,
    discretizer: Option<Discretizer>,
    floor_by_t: Vec<f64>,
    n_actions: usize,
}

impl ModelQ {
    fn state_index(&self, s: &State) -> Option<usize> {
        let key = match (s, &self.discretizer) {
            (State::Index(i), _) => vec![*i as i64],
            (State::Features(f), Some(d)) => d.key(f),
            (State::Features(f), None) => {
                panic!("model Q without a discretizer queried with feature state {f:?}")
            }
        };
        self.index.get(&key).copied()
    }
}

impl QFunction for ModelQ {
    fn q(&self, t: usize, s: &State, a: usize) -> f64 {
        // A zero-horizon recursion has no values to look up.
        if self.table.is_empty() {
            return 0.0;
        }
        match self.state_index(s) {
            Some(i) => self.table[t - 1][i][a],
            None => self.floor_by_t[t - 1],
        }
    }

    fn n_actions(&self) -> usize {
        self.n_actions
    }
}

/// Discounted value of sitting at the reward floor for the remaining steps.
fn floor_value(reward_floor: f64, gamma: f64, remaining: usize) -> f64 {
    if gamma == 1.0 {
        remaining as f64 * reward_floor
    } else {
        reward_floor * (1.0 - gamma.powi(remaining as i32)) / (1.0 - gamma)
    }
}

/// Sparse view of the model's transitions: successor lists per (s, a).
/// Fitted rows are mostly zeros, so Bellman backups over the lists are far
/// cheaper than scanning dense rows every horizon step.
fn sparse_transitions(mdp: &TabularMDP) -> Vec<Vec<Vec<(usize, f64)>>> {
    (0..mdp.n_states)
        .map(|s| {
            (0..mdp.n_actions)
                .map(|a| {
                    mdp.transition[s][a]
                        .iter()
                        .enumerate()
                        .filter(|(_, &p)| p > 0.0)
                        .map(|(s2, &p)| (s2, p))
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Finite-horizon Bellman recursion on the fitted model under `pi1`.
pub fn q_from_model(model: &FittedModel, pi1: &Policy, horizon: usize) -> ModelQ {
    let mdp = &model.mdp;
    let sparse = sparse_transitions(mdp);
    // The policy is stationary, so per-state action probabilities can be
    // looked up once instead of once per horizon step.
    let probs_by_state: Vec<Vec<f64>> = (0..mdp.n_states)
        .map(|i| pi1.action_probs(&model.representative(i)))
        .collect();
    let mut v_prev = vec![0.0; mdp.n_states];
    let mut by_t: Vec<Vec<Vec<f64>>> = Vec::with_capacity(horizon);
    for _h in 1..=horizon {
        let mut q_h = vec![vec![0.0; mdp.n_actions]; mdp.n_states];
        let mut v_h = vec![0.0; mdp.n_states];
        for s in 0..mdp.n_states {
            for a in 0..mdp.n_actions {
                let mut future = 0.0;
                for &(s2, p) in &sparse[s][a] {
                    future += p * v_prev[s2];
                }
                q_h[s][a] = mdp.mean_reward[s][a] + mdp.gamma * future;
            }
            v_h[s] = probs_by_state[s].iter().zip(&q_h[s]).map(|(p, q)| p * q).sum();
        }
        by_t.push(q_h);
        v_prev = v_h;
    }
    by_t.reverse();
    let floor_by_t = (1..=horizon)
        .map(|t| floor_value(model.reward_floor, mdp.gamma, horizon + 1 - t))
        .collect();
    ModelQ {
        table: by_t,
        index: model.index.clone(),
        discretizer: model.discretizer.clone(),
        floor_by_t,
        n_actions: mdp.n_actions,
    }
}

/// Greedy policy with respect to the finite-horizon optimal value of the
/// fitted model; ties break to the lowest action index. With `minimize`
/// the objective flips, producing deliberately poor candidate policies.
pub fn optimal_policy(model: &FittedModel, horizon: usize, minimize: bool) -> Policy {
    let mdp = &model.mdp;
    let sparse = sparse_transitions(mdp);
    let mut v_prev = vec![0.0; mdp.n_states];
    let mut q_top = vec![vec![0.0; mdp.n_actions]; mdp.n_states];
    for _h in 1..=horizon {
        let mut v_h = vec![0.0; mdp.n_states];
        for s in 0..mdp.n_states {
            for a in 0..mdp.n_actions {
                let mut future = 0.0;
                for &(s2, p) in &sparse[s][a] {
                    future += p * v_prev[s2];
                }
                q_top[s][a] = mdp.mean_reward[s][a] + mdp.gamma * future;
            }
            v_h[s] = if minimize {
                q_top[s].iter().copied().fold(f64::INFINITY, f64::min)
            } else {
                q_top[s].iter().copied().fold(f64::NEG_INFINITY, f64::max)
            };
        }
        v_prev = v_h;
    }
    let mut actions = HashMap::with_capacity(mdp.n_states);
    for s in 0..mdp.n_states {
        let mut best = 0;
        for a in 1..mdp.n_actions {
            let better = if minimize {
                q_top[s][a] < q_top[s][best]
            } else {
                q_top[s][a] > q_top[s][best]
            };
            if better {
                best = a;
            }
        }
        actions.insert(model.keys[s].clone(), best);
    }
    Policy::Greedy(GreedyPolicy {
        actions,
        discretizer: model.discretizer.clone(),
        n_actions: mdp.n_actions,
        default_action: 0,
    })
}
