use crate::error::{OpeError, Result};
use crate::policy::Policy;
use crate::qfunction::{QFunction, TabularQ};
use crate::state::State;

const PROB_TOL: f64 = 1e-12;

/// Discrete reward distribution attached to a state-action pair. Its mean
/// must agree with the MDP's `mean_reward` entry.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardDist {
    pub values: Vec<f64>,
    pub probs: Vec<f64>,
}

impl RewardDist {
    pub fn new(values: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if values.len() != probs.len() || values.is_empty() {
            return Err(OpeError::InvalidMdp(
                "reward distribution needs matching non-empty values/probs".into(),
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_TOL || probs.iter().any(|&p| p < 0.0) {
            return Err(OpeError::InvalidMdp(format!(
                "reward distribution probabilities sum to {total}, expected 1"
            )));
        }
        Ok(Self { values, probs })
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().zip(&self.probs).map(|(v, p)| v * p).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.values
            .iter()
            .zip(&self.probs)
            .map(|(v, p)| p * (v - m) * (v - m))
            .sum()
    }
}

/// Finite MDP with explicit transition and reward tables. Serves as the
/// ground truth for all enumeration-based checks.
#[derive(Debug, Clone)]
pub struct TabularMDP {
    pub name: String,
    pub n_states: usize,
    pub n_actions: usize,
    /// transition[s][a][s'] = P(s'|s,a)
    pub transition: Vec<Vec<Vec<f64>>>,
    /// mean_reward[s][a] = R(s,a)
    pub mean_reward: Vec<Vec<f64>>,
    /// Optional per-(s,a) discrete reward distribution; mean must equal R(s,a).
    pub reward_noise: Option<Vec<Vec<Option<RewardDist>>>>,
    pub initial_dist: Vec<f64>,
    pub gamma: f64,
    pub horizon: usize,
    pub terminal_flags: Vec<bool>,
}

impl TabularMDP {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        transition: Vec<Vec<Vec<f64>>>,
        mean_reward: Vec<Vec<f64>>,
        reward_noise: Option<Vec<Vec<Option<RewardDist>>>>,
        initial_dist: Vec<f64>,
        gamma: f64,
        horizon: usize,
        terminal_flags: Vec<bool>,
    ) -> Result<Self> {
        let n_states = transition.len();
        if n_states == 0 {
            return Err(OpeError::InvalidMdp("no states".into()));
        }
        let n_actions = transition[0].len();
        if n_actions == 0 {
            return Err(OpeError::InvalidMdp("no actions".into()));
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(OpeError::InvalidMdp(format!("gamma {gamma} outside [0,1]")));
        }
        if mean_reward.len() != n_states
            || initial_dist.len() != n_states
            || terminal_flags.len() != n_states
        {
            return Err(OpeError::InvalidMdp("table dimensions disagree".into()));
        }
        for (s, rows) in transition.iter().enumerate() {
            if rows.len() != n_actions {
                return Err(OpeError::InvalidMdp(format!("state {s}: action count mismatch")));
            }
            for (a, row) in rows.iter().enumerate() {
                if row.len() != n_states {
                    return Err(OpeError::InvalidMdp(format!("row ({s},{a}): wrong length")));
                }
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > PROB_TOL || row.iter().any(|&p| p < 0.0) {
                    return Err(OpeError::InvalidMdp(format!(
                        "row ({s},{a}) sums to {total}, expected 1"
                    )));
                }
            }
        }
        let mu_total: f64 = initial_dist.iter().sum();
        if (mu_total - 1.0).abs() > PROB_TOL || initial_dist.iter().any(|&p| p < 0.0) {
            return Err(OpeError::InvalidMdp(format!(
                "initial distribution sums to {mu_total}, expected 1"
            )));
        }
        if let Some(noise) = &reward_noise {
            for (s, row) in noise.iter().enumerate() {
                for (a, dist) in row.iter().enumerate() {
                    if let Some(d) = dist {
                        let m = d.mean();
                        if (m - mean_reward[s][a]).abs() > 1e-9 {
                            return Err(OpeError::InvalidMdp(format!(
                                "reward noise mean {m} at ({s},{a}) disagrees with R={}",
                                mean_reward[s][a]
                            )));
                        }
                    }
                }
            }
        }
        for s in 0..n_states {
            if terminal_flags[s] {
                for a in 0..n_actions {
                    if (transition[s][a][s] - 1.0).abs() > PROB_TOL {
                        return Err(OpeError::InvalidMdp(format!(
                            "absorbing state {s} must self-loop with probability 1"
                        )));
                    }
                    if mean_reward[s][a] != 0.0 {
                        return Err(OpeError::InvalidMdp(format!(
                            "absorbing state {s} must have zero mean reward"
                        )));
                    }
                }
            }
        }
        Ok(Self {
            name: name.into(),
            n_states,
            n_actions,
            transition,
            mean_reward,
            reward_noise,
            initial_dist,
            gamma,
            horizon,
            terminal_flags,
        })
    }

    pub fn reward_dist(&self, s: usize, a: usize) -> Option<&RewardDist> {
        self.reward_noise.as_ref().and_then(|n| n[s][a].as_ref())
    }

    /// Conditional reward variance Var[r | s, a]; zero for deterministic rewards.
    pub fn reward_variance(&self, s: usize, a: usize) -> f64 {
        self.reward_dist(s, a).map_or(0.0, |d| d.variance())
    }

    /// Enumerated reward outcomes (value, prob) for (s, a).
    pub fn reward_outcomes(&self, s: usize, a: usize) -> Vec<(f64, f64)> {
        match self.reward_dist(s, a) {
            Some(d) => d.values.iter().copied().zip(d.probs.iter().copied()).collect(),
            None => vec![(self.mean_reward[s][a], 1.0)],
        }
    }

    /// Smallest and largest reward realizable anywhere in the MDP.
    pub fn reward_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                for (v, p) in self.reward_outcomes(s, a) {
                    if p > 0.0 {
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                }
            }
        }
        (lo, hi)
    }

    /// Closed-form bounds on the discounted H-step return.
    pub fn return_range(&self) -> (f64, f64) {
        let (lo, hi) = self.reward_range();
        let mut disc = 0.0;
        for t in 0..self.horizon {
            disc += self.gamma.powi(t as i32);
        }
        (lo.min(0.0) * disc, hi.max(0.0) * disc)
    }
}

/// Exact H-step value of `policy` by finite-horizon Bellman backup.
pub fn exact_value(mdp: &TabularMDP, policy: &Policy, horizon: usize) -> Result<f64> {
    let q = exact_q(mdp, policy, horizon)?;
    if horizon == 0 {
        return Ok(0.0);
    }
    let mut v = 0.0;
    for s in 0..mdp.n_states {
        if mdp.initial_dist[s] > 0.0 {
            v += mdp.initial_dist[s] * q.v(1, &State::Index(s), policy);
        }
    }
    Ok(v)
}

/// Exact finite-horizon action values. `q(t, s, a)` is the (H+1-t)-step
/// action value under `policy`, so `q(horizon, s, a) = R(s, a)`.
pub fn exact_q(mdp: &TabularMDP, policy: &Policy, horizon: usize) -> Result<TabularQ> {
    if horizon > mdp.horizon {
        return Err(OpeError::InvalidArgument(format!(
            "horizon {horizon} exceeds mdp horizon {}",
            mdp.horizon
        )));
    }
    // q_by_remaining[h][s][a] is the h-step action value; h = 0 is all zeros.
    let mut v_prev = vec![0.0; mdp.n_states];
    let mut by_t: Vec<Vec<Vec<f64>>> = Vec::with_capacity(horizon);
    for _h in 1..=horizon {
        let mut q_h = vec![vec![0.0; mdp.n_actions]; mdp.n_states];
        let mut v_h = vec![0.0; mdp.n_states];
        for s in 0..mdp.n_states {
            for a in 0..mdp.n_actions {
                let mut future = 0.0;
                for (s2, &p) in mdp.transition[s][a].iter().enumerate() {
                    if p > 0.0 {
                        future += p * v_prev[s2];
                    }
                }
                q_h[s][a] = mdp.mean_reward[s][a] + mdp.gamma * future;
            }
            let probs = policy.action_probs(&State::Index(s));
            v_h[s] = probs.iter().zip(&q_h[s]).map(|(p, q)| p * q).sum();
        }
        by_t.push(q_h);
        v_prev = v_h;
    }
    // by_t currently indexed by remaining steps h-1; reverse so index 0 is t=1.
    by_t.reverse();
    Ok(TabularQ::new(by_t, mdp.n_actions))
}
