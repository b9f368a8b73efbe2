use std::collections::HashMap;

use crate::envs::{factored_decode, factored_encode};
use crate::error::{OpeError, Result};
use crate::mdp::TabularMDP;
use crate::model::fitted::FittedModel;
use crate::state::State;
use crate::trajectory::Dataset;

const JOINT_GUARD: usize = 100_000;

/// Solve the normal equations X'X beta = X'y by Gaussian elimination with
/// partial pivoting. Returns None when the system is singular.
fn least_squares(rows: &[Vec<f64>], targets: &[f64]) -> Option<Vec<f64>> {
    let k = rows[0].len();
    let mut a = vec![vec![0.0; k + 1]; k];
    for (row, &y) in rows.iter().zip(targets) {
        for i in 0..k {
            for j in 0..k {
                a[i][j] += row[i] * row[j];
            }
            a[i][k] += row[i] * y;
        }
    }
    for col in 0..k {
        let pivot = (col..k).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-10 {
            return None;
        }
        a.swap(col, pivot);
        for i in 0..k {
            if i != col {
                let f = a[i][col] / a[col][col];
                for j in col..=k {
                    a[i][j] -= f * a[col][j];
                }
            }
        }
    }
    Some((0..k).map(|i| a[i][k] / a[i][i]).collect())
}

fn decode_state(s: &State, n_vars: usize, arity: usize) -> Result<Vec<usize>> {
    match s {
        State::Index(i) => {
            if *i >= arity.pow(n_vars as u32) {
                return Err(OpeError::InvalidArgument(format!(
                    "state {i} outside the {n_vars}-variable arity-{arity} joint space"
                )));
            }
            Ok(factored_decode(*i, n_vars, arity))
        }
        State::Features(f) => {
            let vars: Option<Vec<usize>> = f
                .iter()
                .map(|&x| {
                    (x >= 0.0 && x.fract() == 0.0 && (x as usize) < arity).then(|| x as usize)
                })
                .collect();
            vars.filter(|v| v.len() == n_vars).ok_or_else(|| {
                OpeError::InvalidArgument(format!(
                    "feature state {f:?} is not a {n_vars}-variable arity-{arity} vector"
                ))
            })
        }
    }
}

/// Factored MLE: per-variable marginal transition tables (variables evolve
/// independently given the action) and a per-action linear regression of
/// the reward on the selected state variables. The joint tabular model is
/// materialized for downstream planning and Q computation.
#[allow(clippy::too_many_arguments)]
pub fn fit_factored_model(
    dataset: &Dataset,
    n_vars: usize,
    var_arity: usize,
    n_actions: usize,
    reward_features: &[usize],
    gamma: f64,
) -> Result<FittedModel> {
    if reward_features.iter().any(|&i| i >= n_vars) {
        return Err(OpeError::InvalidArgument(
            "reward feature index outside the state variables".into(),
        ));
    }
    let n_states = (0..n_vars).try_fold(1usize, |acc, _| {
        acc.checked_mul(var_arity).filter(|&n| n <= JOINT_GUARD)
    });
    let n_states =
        n_states.ok_or_else(|| OpeError::SizeGuard("factored joint space exceeds 10^5".into()))?;

    // marginal_counts[var][v][a][v']
    let mut marginal_counts = vec![vec![vec![vec![0usize; var_arity]; n_actions]; var_arity]; n_vars];
    // per-action regression rows: [1, selected vars...] -> reward
    let mut reg_rows: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n_actions];
    let mut reg_targets: Vec<Vec<f64>> = vec![Vec::new(); n_actions];
    let mut initial_counts: HashMap<usize, usize> = HashMap::new();
    let mut r_min = f64::INFINITY;
    for traj in &dataset.trajectories {
        let first = decode_state(&traj.steps[0].state, n_vars, var_arity)?;
        *initial_counts.entry(factored_encode(&first, var_arity)).or_insert(0) += 1;
        for t in 0..traj.steps.len() {
            let step = &traj.steps[t];
            if step.action >= n_actions {
                return Err(OpeError::InvalidArgument(format!(
                    "action {} outside the declared {n_actions} actions",
                    step.action
                )));
            }
            let vars = decode_state(&step.state, n_vars, var_arity)?;
            let next_vars = decode_state(traj.state_at(t + 2), n_vars, var_arity)?;
            for i in 0..n_vars {
                marginal_counts[i][vars[i]][step.action][next_vars[i]] += 1;
            }
            let mut row = Vec::with_capacity(reward_features.len() + 1);
            row.push(1.0);
            row.extend(reward_features.iter().map(|&i| vars[i] as f64));
            reg_rows[step.action].push(row);
            reg_targets[step.action].push(step.reward);
            r_min = r_min.min(step.reward);
        }
    }
    if r_min == f64::INFINITY {
        return Err(OpeError::InvalidArgument("factored fit needs a nonempty dataset".into()));
    }

    // Marginal rows: MLE where observed, self-loop on the variable where not.
    let mut marginals = vec![vec![vec![vec![0.0; var_arity]; n_actions]; var_arity]; n_vars];
    for i in 0..n_vars {
        for v in 0..var_arity {
            for a in 0..n_actions {
                let total: usize = marginal_counts[i][v][a].iter().sum();
                if total == 0 {
                    marginals[i][v][a][v] = 1.0;
                } else {
                    for v2 in 0..var_arity {
                        marginals[i][v][a][v2] =
                            marginal_counts[i][v][a][v2] as f64 / total as f64;
                    }
                    let drift = 1.0 - marginals[i][v][a].iter().sum::<f64>();
                    let arg = v_argmax(&marginals[i][v][a]);
                    marginals[i][v][a][arg] += drift;
                }
            }
        }
    }

    let mut regression_fallback = false;
    let mut betas: Vec<Vec<f64>> = Vec::with_capacity(n_actions);
    for a in 0..n_actions {
        if reg_rows[a].is_empty() {
            regression_fallback = true;
            betas.push(vec![r_min; 1]);
            continue;
        }
        match least_squares(&reg_rows[a], &reg_targets[a]) {
            Some(beta) => betas.push(beta),
            None => {
                regression_fallback = true;
                let mean = reg_targets[a].iter().sum::<f64>() / reg_targets[a].len() as f64;
                betas.push(vec![mean]);
            }
        }
    }

    let mut transition = vec![vec![vec![0.0; n_states]; n_actions]; n_states];
    let mut mean_reward = vec![vec![0.0; n_actions]; n_states];
    for s in 0..n_states {
        let vars = factored_decode(s, n_vars, var_arity);
        for a in 0..n_actions {
            mean_reward[s][a] = if betas[a].len() == 1 {
                betas[a][0]
            } else {
                betas[a][0]
                    + reward_features
                        .iter()
                        .enumerate()
                        .map(|(j, &i)| betas[a][j + 1] * vars[i] as f64)
                        .sum::<f64>()
            };
            for s2 in 0..n_states {
                let next_vars = factored_decode(s2, n_vars, var_arity);
                transition[s][a][s2] = (0..n_vars)
                    .map(|i| marginals[i][vars[i]][a][next_vars[i]])
                    .product();
            }
            let drift = 1.0 - transition[s][a].iter().sum::<f64>();
            let arg = v_argmax(&transition[s][a]);
            transition[s][a][arg] += drift;
        }
    }

    let mut initial_dist = vec![0.0; n_states];
    let n_traj: usize = initial_counts.values().sum();
    for (&s, &c) in &initial_counts {
        initial_dist[s] = c as f64 / n_traj as f64;
    }
    let drift = 1.0 - initial_dist.iter().sum::<f64>();
    let arg = v_argmax(&initial_dist);
    initial_dist[arg] += drift;

    let mdp = TabularMDP::new(
        format!("factored_fit_{}", dataset.meta.env_id),
        transition,
        mean_reward,
        None,
        initial_dist,
        gamma,
        dataset.horizon,
        vec![false; n_states],
    )?;
    let keys: Vec<Vec<i64>> = (0..n_states).map(|s| vec![s as i64]).collect();
    let index = keys.iter().cloned().zip(0..n_states).collect();
    Ok(FittedModel {
        mdp,
        keys,
        index,
        discretizer: None,
        seen: vec![vec![true; n_actions]; n_states],
        reward_floor: r_min,
        regression_fallback,
    })
}

fn v_argmax(xs: &[f64]) -> usize {
    xs.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap()
}
