use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{OpeError, Result};
use crate::mdp::{RewardDist, TabularMDP};

const STATE_GUARD: usize = 1_000_000;

fn dirichlet_row(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    // Dirichlet(1, ..., 1) via normalized exponentials.
    let mut row: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let total: f64 = row.iter().sum();
    for x in &mut row {
        *x /= total;
    }
    // Renormalize exactly so the validator's 1e-12 row-sum check holds.
    let total: f64 = row.iter().sum();
    let last = row.len() - 1;
    row[last] += 1.0 - total;
    row
}

fn terminal_reward_dist(outcomes: usize, rng: &mut impl Rng) -> RewardDist {
    let probs = dirichlet_row(outcomes, rng);
    let values: Vec<f64> = (0..outcomes).map(|_| rng.gen::<f64>()).collect();
    RewardDist::new(values, probs).expect("generated distribution is valid")
}

/// Random discrete tree MDP: states are histories, gamma is 1, and rewards
/// occur only at the last step through a discrete terminal-observation
/// distribution folded into the reward noise of the final (state, action).
pub fn make_random_tree_mdp(
    branch: usize,
    actions: usize,
    horizon: usize,
    seed: u64,
) -> Result<TabularMDP> {
    if branch == 0 || actions == 0 || horizon == 0 {
        return Err(OpeError::InvalidArgument(
            "tree generator needs branch, actions, horizon >= 1".into(),
        ));
    }
    // Level t holds branch * (actions*branch)^(t-1) history states.
    let mut level_sizes = Vec::with_capacity(horizon);
    let mut size = branch;
    let mut total = 0usize;
    for _t in 0..horizon {
        level_sizes.push(size);
        total = total
            .checked_add(size)
            .ok_or_else(|| OpeError::SizeGuard("tree state count overflow".into()))?;
        if total > STATE_GUARD {
            return Err(OpeError::SizeGuard(format!(
                "tree would have more than {STATE_GUARD} histories"
            )));
        }
        size = size
            .checked_mul(actions * branch)
            .ok_or_else(|| OpeError::SizeGuard("tree state count overflow".into()))?;
    }
    let n_states = total + 1; // plus one absorbing state
    let absorbing = n_states - 1;
    let mut offsets = Vec::with_capacity(horizon);
    let mut acc = 0;
    for &ls in &level_sizes {
        offsets.push(acc);
        acc += ls;
    }

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut transition = vec![vec![vec![0.0; n_states]; actions]; n_states];
    let mut mean_reward = vec![vec![0.0; actions]; n_states];
    let mut noise = vec![vec![None; actions]; n_states];
    let mut terminal_flags = vec![false; n_states];
    terminal_flags[absorbing] = true;
    for a in 0..actions {
        transition[absorbing][a][absorbing] = 1.0;
    }

    for (t, &ls) in level_sizes.iter().enumerate() {
        for i in 0..ls {
            let s = offsets[t] + i;
            for a in 0..actions {
                if t + 1 < horizon {
                    let child_base = offsets[t + 1] + (i * actions + a) * branch;
                    let probs = dirichlet_row(branch, &mut rng);
                    for (o, p) in probs.into_iter().enumerate() {
                        transition[s][a][child_base + o] = p;
                    }
                } else {
                    transition[s][a][absorbing] = 1.0;
                    let dist = terminal_reward_dist(branch, &mut rng);
                    mean_reward[s][a] = dist.mean();
                    noise[s][a] = Some(dist);
                }
            }
        }
    }

    let mut initial_dist = vec![0.0; n_states];
    for (i, p) in dirichlet_row(branch, &mut rng).into_iter().enumerate() {
        initial_dist[i] = p;
    }

    TabularMDP::new(
        "tree",
        transition,
        mean_reward,
        Some(noise),
        initial_dist,
        1.0,
        horizon,
        terminal_flags,
    )
}

/// Random layered DAG MDP: states are shared within layers, so trajectories
/// that separate early can reunion. Same terminal-reward encoding as the
/// tree generator.
pub fn make_random_dag_mdp(
    layer_sizes: &[usize],
    actions: usize,
    seed: u64,
) -> Result<TabularMDP> {
    if layer_sizes.is_empty() || actions == 0 || layer_sizes.iter().any(|&l| l == 0) {
        return Err(OpeError::InvalidArgument(
            "dag generator needs non-empty positive layer sizes and actions >= 1".into(),
        ));
    }
    let total: usize = layer_sizes.iter().sum();
    if total > STATE_GUARD {
        return Err(OpeError::SizeGuard(format!(
            "dag would have more than {STATE_GUARD} states"
        )));
    }
    let horizon = layer_sizes.len();
    let n_states = total + 1;
    let absorbing = n_states - 1;
    let mut offsets = Vec::with_capacity(horizon);
    let mut acc = 0;
    for &ls in layer_sizes {
        offsets.push(acc);
        acc += ls;
    }

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut transition = vec![vec![vec![0.0; n_states]; actions]; n_states];
    let mut mean_reward = vec![vec![0.0; actions]; n_states];
    let mut noise = vec![vec![None; actions]; n_states];
    let mut terminal_flags = vec![false; n_states];
    terminal_flags[absorbing] = true;
    for a in 0..actions {
        transition[absorbing][a][absorbing] = 1.0;
    }

    for (t, &ls) in layer_sizes.iter().enumerate() {
        for i in 0..ls {
            let s = offsets[t] + i;
            for a in 0..actions {
                if t + 1 < horizon {
                    let next_base = offsets[t + 1];
                    let probs = dirichlet_row(layer_sizes[t + 1], &mut rng);
                    for (j, p) in probs.into_iter().enumerate() {
                        transition[s][a][next_base + j] = p;
                    }
                } else {
                    transition[s][a][absorbing] = 1.0;
                    let dist = terminal_reward_dist(3, &mut rng);
                    mean_reward[s][a] = dist.mean();
                    noise[s][a] = Some(dist);
                }
            }
        }
    }

    let mut initial_dist = vec![0.0; n_states];
    for (i, p) in dirichlet_row(layer_sizes[0], &mut rng).into_iter().enumerate() {
        initial_dist[i] = p;
    }

    TabularMDP::new(
        "dag",
        transition,
        mean_reward,
        Some(noise),
        initial_dist,
        1.0,
        horizon,
        terminal_flags,
    )
}

/// Mixed-radix encoding of a factored state.
pub fn factored_encode(vars: &[usize], arity: usize) -> usize {
    vars.iter().fold(0, |acc, &v| acc * arity + v)
}

pub fn factored_decode(mut idx: usize, n_vars: usize, arity: usize) -> Vec<usize> {
    let mut vars = vec![0; n_vars];
    for i in (0..n_vars).rev() {
        vars[i] = idx % arity;
        idx /= arity;
    }
    vars
}

/// Synthetic MDP whose state variables evolve independently given the
/// action; the joint tabular MDP is materialized for exact ground truth.
/// The mean reward is linear in the first min(3, n_vars) variables with a
/// per-action offset.
pub fn make_factored_sim(
    n_vars: usize,
    var_arity: usize,
    actions: usize,
    seed: u64,
) -> Result<TabularMDP> {
    if n_vars == 0 || var_arity == 0 || actions == 0 {
        return Err(OpeError::InvalidArgument(
            "factored generator needs n_vars, var_arity, actions >= 1".into(),
        ));
    }
    let mut n_states = 1usize;
    for _ in 0..n_vars {
        n_states = n_states
            .checked_mul(var_arity)
            .filter(|&n| n <= 100_000)
            .ok_or_else(|| OpeError::SizeGuard("factored joint space exceeds 10^5".into()))?;
    }

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    // marginals[i][v][a] is the next-value distribution of variable i.
    let mut marginals = vec![vec![vec![Vec::new(); actions]; var_arity]; n_vars];
    for var in marginals.iter_mut() {
        for value in var.iter_mut() {
            for action in value.iter_mut() {
                *action = dirichlet_row(var_arity, &mut rng);
            }
        }
    }
    let reward_vars = n_vars.min(3);
    let coeffs: Vec<f64> = (0..reward_vars).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let offsets: Vec<f64> = (0..actions).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let init_marginals: Vec<Vec<f64>> =
        (0..n_vars).map(|_| dirichlet_row(var_arity, &mut rng)).collect();

    let mut transition = vec![vec![vec![0.0; n_states]; actions]; n_states];
    let mut mean_reward = vec![vec![0.0; actions]; n_states];
    let mut initial_dist = vec![0.0; n_states];
    for s in 0..n_states {
        let vars = factored_decode(s, n_vars, var_arity);
        initial_dist[s] = vars
            .iter()
            .enumerate()
            .map(|(i, &v)| init_marginals[i][v])
            .product();
        for a in 0..actions {
            mean_reward[s][a] = offsets[a]
                + coeffs
                    .iter()
                    .enumerate()
                    .map(|(i, c)| c * vars[i] as f64)
                    .sum::<f64>();
            for s2 in 0..n_states {
                let next_vars = factored_decode(s2, n_vars, var_arity);
                transition[s][a][s2] = vars
                    .iter()
                    .zip(&next_vars)
                    .enumerate()
                    .map(|(i, (&v, &v2))| marginals[i][v][a][v2])
                    .product();
            }
            // Absorb float drift from the product form into the last entry.
            let total: f64 = transition[s][a].iter().sum();
            transition[s][a][n_states - 1] += 1.0 - total;
        }
    }
    let mu_total: f64 = initial_dist.iter().sum();
    initial_dist[n_states - 1] += 1.0 - mu_total;

    TabularMDP::new(
        "factored",
        transition,
        mean_reward,
        None,
        initial_dist,
        1.0,
        5,
        vec![false; n_states],
    )
}
