use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{OpeError, Result};
use crate::mdp::TabularMDP;
use crate::numeric::{derive_seed, mean, stderr_of_mean};
use crate::policy::Policy;
use crate::state::State;
use crate::trajectory::{Dataset, DatasetMeta, Step, Trajectory};

/// Anything trajectories can be rolled out in. Step functions are pure given
/// the rng state, so rollouts are safe to run from concurrent workers.
pub trait Environment: Sync {
    fn id(&self) -> String;
    fn horizon(&self) -> usize;
    fn gamma(&self) -> f64;
    fn n_actions(&self) -> usize;
    /// Number of states for tabular environments; None for continuous ones.
    fn n_states(&self) -> Option<usize> {
        None
    }
    fn sample_initial(&self, rng: &mut dyn RngCore) -> State;
    /// Returns (next_state, reward, terminal). Terminal states absorb with
    /// zero reward.
    fn step(&self, s: &State, a: usize, rng: &mut dyn RngCore) -> (State, f64, bool);
}

pub fn sample_categorical(probs: &[f64], rng: &mut dyn RngCore) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

impl Environment for TabularMDP {
    fn id(&self) -> String {
        self.name.clone()
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn n_states(&self) -> Option<usize> {
        Some(self.n_states)
    }

    fn sample_initial(&self, rng: &mut dyn RngCore) -> State {
        State::Index(sample_categorical(&self.initial_dist, rng))
    }

    fn step(&self, s: &State, a: usize, rng: &mut dyn RngCore) -> (State, f64, bool) {
        let i = s.expect_index();
        if self.terminal_flags[i] {
            return (s.clone(), 0.0, true);
        }
        let next = sample_categorical(&self.transition[i][a], rng);
        let reward = match self.reward_dist(i, a) {
            Some(d) => d.values[sample_categorical(&d.probs, rng)],
            None => self.mean_reward[i][a],
        };
        (State::Index(next), reward, self.terminal_flags[next])
    }
}

fn validate_policy(env: &dyn Environment, policy: &Policy) -> Result<()> {
    if policy.n_actions() != env.n_actions() {
        return Err(OpeError::InvalidPolicy(format!(
            "policy has {} actions, environment {} has {}",
            policy.n_actions(),
            env.id(),
            env.n_actions()
        )));
    }
    if let (Policy::Tabular { probs }, Some(n_states)) = (policy, env.n_states()) {
        if probs.len() < n_states {
            return Err(OpeError::InvalidPolicy(format!(
                "tabular policy covers {} states, environment has {n_states}",
                probs.len()
            )));
        }
    }
    Ok(())
}

/// Roll out one H-step trajectory under `policy`, logging the behavior
/// probability of each sampled action. Deterministic given `seed`.
pub fn sample_trajectory(
    env: &dyn Environment,
    policy: &Policy,
    seed: u64,
) -> Result<Trajectory> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut state = env.sample_initial(&mut rng);
    let mut done = false;
    let mut steps = Vec::with_capacity(env.horizon());
    for _t in 1..=env.horizon() {
        let action = policy.sample(&state, &mut rng);
        let behavior_prob = policy.prob(&state, action);
        if behavior_prob <= 0.0 {
            return Err(OpeError::InvalidPolicy(
                "sampled an action with non-positive probability".into(),
            ));
        }
        let (next, reward, terminal) = if done {
            (state.clone(), 0.0, true)
        } else {
            env.step(&state, action, &mut rng)
        };
        steps.push(Step { state: state.clone(), action, reward, behavior_prob });
        state = next;
        done = done || terminal;
    }
    Ok(Trajectory { steps, final_state: state })
}

/// Sample `n` independent trajectories. Per-trajectory sub-seeds come from
/// the master seed, so the result is independent of scheduling.
pub fn sample_dataset(
    env: &dyn Environment,
    policy: &Policy,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 {
        return Err(OpeError::InvalidArgument("cannot sample an empty dataset".into()));
    }
    validate_policy(env, policy)?;
    let trajectories = (0..n)
        .map(|i| sample_trajectory(env, policy, derive_seed(seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(trajectories, env.horizon(), DatasetMeta { env_id: env.id(), seed })
}

/// Sample mean and standard error of the discounted return over `n` rollouts.
pub fn monte_carlo_value(
    env: &dyn Environment,
    policy: &Policy,
    n: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if n < 2 {
        return Err(OpeError::InvalidArgument("monte_carlo_value needs n >= 2".into()));
    }
    validate_policy(env, policy)?;
    let gamma = env.gamma();
    let returns = (0..n)
        .map(|i| {
            sample_trajectory(env, policy, derive_seed(seed, i as u64))
                .map(|t| t.discounted_return(gamma))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((mean(&returns), stderr_of_mean(&returns)))
}
