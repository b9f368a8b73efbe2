use crate::error::{OpeError, Result};
use crate::mdp::TabularMDP;
use crate::policy::Policy;
use crate::state::State;
use crate::trajectory::{Step, Trajectory};

/// A trajectory outcome together with its exact probability under
/// (mu, pi0), including reward-noise branching.
#[derive(Debug, Clone)]
pub struct WeightedTrajectory {
    pub prob: f64,
    pub trajectory: Trajectory,
}

/// Brute-force enumeration of the full trajectory distribution of a small
/// tabular MDP. This is the independent oracle behind the unbiasedness and
/// variance checks; it shares no code with the recursive computations it is
/// used to verify.
pub fn enumerate_trajectories(
    mdp: &TabularMDP,
    pi0: &Policy,
    horizon: usize,
    max_outcomes: usize,
) -> Result<Vec<WeightedTrajectory>> {
    let mut out = Vec::new();
    let mut steps: Vec<Step> = Vec::with_capacity(horizon);
    for s in 0..mdp.n_states {
        let p = mdp.initial_dist[s];
        if p > 0.0 {
            expand(mdp, pi0, horizon, s, p, &mut steps, &mut out, max_outcomes)?;
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn expand(
    mdp: &TabularMDP,
    pi0: &Policy,
    horizon: usize,
    state: usize,
    prob: f64,
    steps: &mut Vec<Step>,
    out: &mut Vec<WeightedTrajectory>,
    max_outcomes: usize,
) -> Result<()> {
    if steps.len() == horizon {
        if out.len() >= max_outcomes {
            return Err(OpeError::SizeGuard(format!(
                "trajectory enumeration exceeds {max_outcomes} outcomes"
            )));
        }
        out.push(WeightedTrajectory {
            prob,
            trajectory: Trajectory { steps: steps.clone(), final_state: State::Index(state) },
        });
        return Ok(());
    }
    for a in 0..mdp.n_actions {
        let pa = pi0.prob(&State::Index(state), a);
        if pa <= 0.0 {
            continue;
        }
        for (reward, pr) in mdp.reward_outcomes(state, a) {
            if pr <= 0.0 {
                continue;
            }
            for (next, &pt) in mdp.transition[state][a].iter().enumerate() {
                if pt <= 0.0 {
                    continue;
                }
                steps.push(Step {
                    state: State::Index(state),
                    action: a,
                    reward,
                    behavior_prob: pa,
                });
                expand(mdp, pi0, horizon, next, prob * pa * pr * pt, steps, out, max_outcomes)?;
                steps.pop();
            }
        }
    }
    Ok(())
}

/// Expectation of a per-trajectory estimator under the enumerated
/// distribution.
pub fn enumerated_mean(
    outcomes: &[WeightedTrajectory],
    mut f: impl FnMut(&Trajectory) -> Result<f64>,
) -> Result<f64> {
    let mut total = 0.0;
    for o in outcomes {
        total += o.prob * f(&o.trajectory)?;
    }
    Ok(total)
}

/// Exact variance of a per-trajectory estimator under the enumerated
/// distribution.
pub fn enumerated_variance(
    outcomes: &[WeightedTrajectory],
    mut f: impl FnMut(&Trajectory) -> Result<f64>,
) -> Result<f64> {
    let mut values = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        values.push((o.prob, f(&o.trajectory)?));
    }
    let mean: f64 = values.iter().map(|(p, v)| p * v).sum();
    Ok(values.iter().map(|(p, v)| p * (v - mean) * (v - mean)).sum())
}
