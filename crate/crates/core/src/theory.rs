//! Exact evaluation of the estimator theory on enumerable MDPs: the
//! variance recursion of the doubly robust estimator, Cramer-Rao-style
//! lower bounds for unbiased off-policy estimators, and the bias bound of
//! the transition-approximating DR variant.

use crate::error::{OpeError, Result};
use crate::mdp::{exact_q, TabularMDP};
use crate::model::FittedModel;
use crate::numeric::{mean, stderr_of_mean};
use crate::policy::Policy;
use crate::qfunction::QFunction;
use crate::state::State;

const BACKUP_GUARD: usize = 1_000_000;

/// Per-horizon decomposition of the doubly robust estimator's variance.
/// `future_terms[t-1]` is the tail contribution of steps after t, so at
/// every t: state + delta + reward + future at t equals future at t-1.
#[derive(Debug, Clone)]
pub struct VarianceBreakdown {
    pub state_terms: Vec<f64>,
    pub delta_terms: Vec<f64>,
    pub reward_terms: Vec<f64>,
    pub future_terms: Vec<f64>,
    pub total: f64,
}

fn check_support(pi0: f64, pi1: f64, step: usize) -> Result<()> {
    if pi0 <= 0.0 && pi1 > 0.0 {
        return Err(OpeError::SupportViolation { step, target_prob: pi1 });
    }
    Ok(())
}

/// Exact variance of the doubly robust estimator under (mu, pi0), unrolled
/// from the backward recursion into forward importance-weighted occupancy
/// weights. Yields the per-step state-value, Q-error (delta), and
/// reward-noise contributions whose sum is the total variance.
pub fn dr_variance_exact(
    mdp: &TabularMDP,
    pi0: &Policy,
    pi1: &Policy,
    qhat: &dyn QFunction,
    horizon: usize,
) -> Result<VarianceBreakdown> {
    if mdp.n_states * mdp.n_actions * horizon > BACKUP_GUARD {
        return Err(OpeError::SizeGuard(format!(
            "variance recursion needs more than {BACKUP_GUARD} backup cells"
        )));
    }
    let q_true = exact_q(mdp, pi1, horizon)?;
    // v[t-1][s] = true value with H+1-t steps remaining.
    let v: Vec<Vec<f64>> = (1..=horizon)
        .map(|t| {
            (0..mdp.n_states)
                .map(|s| q_true.v(t, &State::Index(s), pi1))
                .collect()
        })
        .collect();

    let mut state_terms = vec![0.0; horizon];
    let mut delta_terms = vec![0.0; horizon];
    let mut reward_terms = vec![0.0; horizon];

    // w[s]: importance-weighted occupancy E[rho_{1:t-1}^2 gamma^{2(t-1)} 1{s_t=s}].
    let mut w = mdp.initial_dist.clone();
    // Step-1 state term: variance of the true value over the initial state.
    let ev: f64 = (0..mdp.n_states).map(|s| w[s] * v[0][s]).sum();
    let ev2: f64 = (0..mdp.n_states).map(|s| w[s] * v[0][s] * v[0][s]).sum();
    state_terms[0] = ev2 - ev * ev;

    for t in 1..=horizon {
        let mut w_next = vec![0.0; mdp.n_states];
        for s in 0..mdp.n_states {
            if w[s] == 0.0 {
                continue;
            }
            let st = State::Index(s);
            // Var over a ~ pi0 of rho * (Qhat - Q), and reward-noise term.
            let mut m1 = 0.0;
            let mut m2 = 0.0;
            for a in 0..mdp.n_actions {
                let p0 = pi0.prob(&st, a);
                let p1 = pi1.prob(&st, a);
                check_support(p0, p1, t)?;
                if p0 <= 0.0 {
                    continue;
                }
                let rho = p1 / p0;
                let delta = qhat.q(t, &st, a) - q_true.q(t, &st, a);
                m1 += p0 * rho * delta;
                m2 += p0 * rho * rho * delta * delta;
                reward_terms[t - 1] += w[s] * p0 * rho * rho * mdp.reward_variance(s, a);
                if t < horizon {
                    // Next-step state term, conditional on (s, a); the
                    // occupancy weight carries rho^2 gamma^2 per level.
                    let c = w[s] * p0 * rho * rho * mdp.gamma * mdp.gamma;
                    let mut e1 = 0.0;
                    let mut e2 = 0.0;
                    for (s2, &p) in mdp.transition[s][a].iter().enumerate() {
                        if p > 0.0 {
                            e1 += p * v[t][s2];
                            e2 += p * v[t][s2] * v[t][s2];
                            w_next[s2] += c * p;
                        }
                    }
                    state_terms[t] += c * (e2 - e1 * e1);
                }
            }
            delta_terms[t - 1] += w[s] * (m2 - m1 * m1);
        }
        w = w_next;
    }

    let total: f64 = state_terms
        .iter()
        .zip(&delta_terms)
        .zip(&reward_terms)
        .map(|((s, d), r)| s + d + r)
        .sum();
    let mut future_terms = vec![0.0; horizon];
    let mut tail = 0.0;
    for t in (0..horizon).rev() {
        future_terms[t] = tail;
        tail += state_terms[t] + delta_terms[t] + reward_terms[t];
    }
    Ok(VarianceBreakdown { state_terms, delta_terms, reward_terms, future_terms, total })
}

fn require_undiscounted(mdp: &TabularMDP, what: &str) -> Result<()> {
    if (mdp.gamma - 1.0).abs() > 1e-12 {
        return Err(OpeError::InvalidArgument(format!(
            "{what} is defined for undiscounted returns; got gamma = {}",
            mdp.gamma
        )));
    }
    Ok(())
}

/// Variance floor for unbiased off-policy estimation on tree-structured
/// MDPs: the sum over steps of the squared cumulative importance ratio
/// times the conditional variance of the true value, evaluated by explicit
/// enumeration of history paths. The step-H reward noise supplies the
/// final term.
pub fn cr_bound_tree(tree: &TabularMDP, pi0: &Policy, pi1: &Policy) -> Result<f64> {
    require_undiscounted(tree, "the tree variance bound")?;
    crate::envs::verify_tree(tree).map_err(|e| {
        OpeError::InvalidArgument(format!(
            "not a tree MDP ({e}); use the layered-DAG bound instead"
        ))
    })?;
    let horizon = tree.horizon;
    let q_true = exact_q(tree, pi1, horizon)?;
    let v: Vec<Vec<f64>> = (1..=horizon)
        .map(|t| {
            (0..tree.n_states)
                .map(|s| q_true.v(t, &State::Index(s), pi1))
                .collect()
        })
        .collect();

    // Initial-state term.
    let e1: f64 = (0..tree.n_states).map(|s| tree.initial_dist[s] * v[0][s]).sum();
    let e2: f64 = (0..tree.n_states)
        .map(|s| tree.initial_dist[s] * v[0][s] * v[0][s])
        .sum();
    let mut bound = e2 - e1 * e1;

    // Depth-first walk over history prefixes; `weight` carries the path
    // probability under pi0 times the squared cumulative ratio.
    let mut stack: Vec<(usize, usize, f64)> = (0..tree.n_states)
        .filter(|&s| tree.initial_dist[s] > 0.0)
        .map(|s| (s, 1, tree.initial_dist[s]))
        .collect();
    while let Some((s, t, weight)) = stack.pop() {
        let st = State::Index(s);
        for a in 0..tree.n_actions {
            let p0 = pi0.prob(&st, a);
            let p1 = pi1.prob(&st, a);
            check_support(p0, p1, t)?;
            if p0 <= 0.0 {
                continue;
            }
            let rho = p1 / p0;
            let w2 = weight * p0 * rho * rho;
            if t == tree.horizon {
                // Terminal term: leftover reward noise given the last pair.
                bound += w2 * tree.reward_variance(s, a);
            } else {
                let mut e1 = 0.0;
                let mut e2 = 0.0;
                for (s2, &p) in tree.transition[s][a].iter().enumerate() {
                    if p > 0.0 {
                        e1 += p * v[t][s2];
                        e2 += p * v[t][s2] * v[t][s2];
                        stack.push((s2, t + 1, w2 * p));
                    }
                }
                bound += w2 * (e2 - e1 * e1);
            }
        }
    }
    Ok(bound)
}

/// Per-layer marginal (state, action) occupancies under a policy.
pub fn occupancy_table(mdp: &TabularMDP, policy: &Policy) -> Result<Vec<Vec<Vec<f64>>>> {
    crate::envs::layered_reachability(mdp)?;
    let mut d = mdp.initial_dist.clone();
    let mut layers = Vec::with_capacity(mdp.horizon);
    for _t in 0..mdp.horizon {
        let mut occ = vec![vec![0.0; mdp.n_actions]; mdp.n_states];
        let mut d_next = vec![0.0; mdp.n_states];
        for s in 0..mdp.n_states {
            if d[s] == 0.0 {
                continue;
            }
            for a in 0..mdp.n_actions {
                let pa = policy.prob(&State::Index(s), a);
                if pa <= 0.0 {
                    continue;
                }
                occ[s][a] = d[s] * pa;
                for (s2, &p) in mdp.transition[s][a].iter().enumerate() {
                    if p > 0.0 {
                        d_next[s2] += d[s] * pa * p;
                    }
                }
            }
        }
        layers.push(occ);
        d = d_next;
    }
    Ok(layers)
}

/// Variance floor for layered DAG MDPs: the tree bound with the cumulative
/// importance ratio replaced by the occupancy ratio of the preceding
/// (state, action) pair — strictly smaller whenever separated histories
/// reunite on a shared state.
pub fn cr_bound_dag(dag: &TabularMDP, pi0: &Policy, pi1: &Policy) -> Result<f64> {
    require_undiscounted(dag, "the layered variance bound")?;
    let occ0 = occupancy_table(dag, pi0)?;
    let occ1 = occupancy_table(dag, pi1)?;
    let horizon = dag.horizon;
    let q_true = exact_q(dag, pi1, horizon)?;
    let v: Vec<Vec<f64>> = (1..=horizon)
        .map(|t| {
            (0..dag.n_states)
                .map(|s| q_true.v(t, &State::Index(s), pi1))
                .collect()
        })
        .collect();

    let e1: f64 = (0..dag.n_states).map(|s| dag.initial_dist[s] * v[0][s]).sum();
    let e2: f64 = (0..dag.n_states)
        .map(|s| dag.initial_dist[s] * v[0][s] * v[0][s])
        .sum();
    let mut bound = e2 - e1 * e1;

    for t in 1..=horizon {
        for s in 0..dag.n_states {
            for a in 0..dag.n_actions {
                let p0 = occ0[t - 1][s][a];
                let p1 = occ1[t - 1][s][a];
                if p1 > 0.0 && p0 == 0.0 {
                    return Err(OpeError::SupportViolation { step: t, target_prob: p1 });
                }
                if p0 == 0.0 || p1 == 0.0 {
                    continue;
                }
                let w2 = p1 * p1 / p0;
                if t == horizon {
                    bound += w2 * dag.reward_variance(s, a);
                } else {
                    let mut m1 = 0.0;
                    let mut m2 = 0.0;
                    for (s2, &p) in dag.transition[s][a].iter().enumerate() {
                        if p > 0.0 {
                            m1 += p * v[t][s2];
                            m2 += p * v[t][s2] * v[t][s2];
                        }
                    }
                    bound += w2 * (m2 - m1 * m1);
                }
            }
        }
    }
    Ok(bound)
}

/// Worst-case bias of the transition-approximating DR variant:
/// epsilon * v_max * sum over t of gamma^t.
pub fn drv2_bias_bound(epsilon: f64, v_max: f64, gamma: f64, horizon: usize) -> Result<f64> {
    if epsilon < 0.0 || v_max < 0.0 {
        return Err(OpeError::InvalidArgument(format!(
            "bias bound needs epsilon >= 0 and v_max >= 0, got {epsilon} and {v_max}"
        )));
    }
    let geom: f64 = (1..=horizon).map(|t| gamma.powi(t as i32)).sum();
    Ok(epsilon * v_max * geom)
}

/// Largest L1 distance between a fitted model's transition rows and the
/// true MDP's, maximized over (state, action).
pub fn model_l1_epsilon(model: &FittedModel, truth: &TabularMDP) -> Result<f64> {
    if model.mdp.n_actions != truth.n_actions {
        return Err(OpeError::InvalidArgument(format!(
            "action count mismatch: model {} vs truth {}",
            model.mdp.n_actions, truth.n_actions
        )));
    }
    // Align truth states with model indices through the model's key map.
    let to_model: Vec<usize> = (0..truth.n_states)
        .map(|s| {
            model.state_index(&State::Index(s)).ok_or_else(|| {
                OpeError::InvalidArgument(format!("truth state {s} missing from the model"))
            })
        })
        .collect::<Result<_>>()?;
    if model.mdp.n_states != truth.n_states {
        return Err(OpeError::InvalidArgument(format!(
            "state count mismatch: model {} vs truth {}",
            model.mdp.n_states, truth.n_states
        )));
    }
    let mut eps: f64 = 0.0;
    for s in 0..truth.n_states {
        for a in 0..truth.n_actions {
            let l1: f64 = (0..truth.n_states)
                .map(|s2| {
                    (model.mdp.transition[to_model[s]][a][to_model[s2]]
                        - truth.transition[s][a][s2])
                        .abs()
                })
                .sum();
            eps = eps.max(l1);
        }
    }
    Ok(eps)
}

/// Monte Carlo error profile of an estimator across repeated data draws.
#[derive(Debug, Clone)]
pub struct MseReport {
    pub mean_estimate: f64,
    pub bias: f64,
    pub bias_stderr: f64,
    pub variance: f64,
    pub rmse: f64,
    pub rmse_stderr: f64,
    pub rel_rmse: f64,
    pub rel_rmse_stderr: f64,
}

/// Runs `draw(run_index)` to produce one point estimate per repetition and
/// summarizes error against the known ground truth. Relative RMSE divides
/// by |ground truth|; the RMSE standard error comes from the delta method
/// on the mean squared error.
pub fn estimator_mse(
    ground_truth: f64,
    runs: usize,
    mut draw: impl FnMut(usize) -> Result<f64>,
) -> Result<MseReport> {
    if runs < 2 {
        return Err(OpeError::InvalidArgument(format!("need runs >= 2, got {runs}")));
    }
    let estimates: Vec<f64> = (0..runs).map(&mut draw).collect::<Result<_>>()?;
    let sq_errors: Vec<f64> = estimates
        .iter()
        .map(|e| (e - ground_truth) * (e - ground_truth))
        .collect();
    let mean_estimate = mean(&estimates);
    let bias = mean_estimate - ground_truth;
    let bias_stderr = stderr_of_mean(&estimates);
    let variance = estimates
        .iter()
        .map(|e| (e - mean_estimate) * (e - mean_estimate))
        .sum::<f64>()
        / (runs as f64 - 1.0);
    let mse = mean(&sq_errors);
    let mse_stderr = stderr_of_mean(&sq_errors);
    let rmse = mse.sqrt();
    let rmse_stderr = if rmse > 0.0 { mse_stderr / (2.0 * rmse) } else { mse_stderr.sqrt() };
    let scale = ground_truth.abs();
    let (rel_rmse, rel_rmse_stderr) = if scale > 0.0 {
        (rmse / scale, rmse_stderr / scale)
    } else {
        (rmse, rmse_stderr)
    };
    Ok(MseReport {
        mean_estimate,
        bias,
        bias_stderr,
        variance,
        rmse,
        rmse_stderr,
        rel_rmse,
        rel_rmse_stderr,
    })
}
