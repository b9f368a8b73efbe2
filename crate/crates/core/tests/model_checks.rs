//! Model fitting: tabular MLE, planning, kernel averaging, factored fits.

use ope_core::envs::{make_factored_sim, Discretizer};
use ope_core::fixtures::{reunion_dag, t2};
use ope_core::mdp::{exact_q, exact_value, TabularMDP};
use ope_core::model::{
    constant_baseline_q, fit_factored_model, fit_tabular_model, kernel_q, optimal_policy,
    q_from_model, FittedModel,
};
use ope_core::sampling::sample_dataset;
use ope_core::state::State;
use ope_core::trajectory::{Dataset, DatasetMeta, Step, Trajectory};
use ope_core::{Policy, QFunction};

fn meta() -> DatasetMeta {
    DatasetMeta { env_id: "test".into(), seed: 0 }
}

#[test]
fn single_transition_fit() {
    let traj = Trajectory {
        steps: vec![Step { state: State::Index(0), action: 0, reward: 0.5, behavior_prob: 1.0 }],
        final_state: State::Index(7),
    };
    let data = Dataset::new(vec![traj], 1, meta()).unwrap();
    let model = fit_tabular_model(&data, None, -1.0, 1.0, 2).unwrap();
    let s0 = model.state_index(&State::Index(0)).unwrap();
    let s7 = model.state_index(&State::Index(7)).unwrap();
    assert_eq!(model.mdp.transition[s0][0][s7], 1.0);
    assert_eq!(model.mdp.mean_reward[s0][0], 0.5);
    assert!(model.seen[s0][0]);
    // The unseen pair gets the floor reward and a self-loop.
    assert!(!model.seen[s0][1]);
    assert_eq!(model.mdp.mean_reward[s0][1], -1.0);
    assert_eq!(model.mdp.transition[s0][1][s0], 1.0);
    assert_eq!(model.reward(&State::Index(999), 0), -1.0);
}

fn max_transition_error(model: &FittedModel, truth: &TabularMDP) -> f64 {
    let mut err: f64 = 0.0;
    for s in 0..truth.n_states {
        let Some(i) = model.state_index(&State::Index(s)) else { continue };
        for a in 0..truth.n_actions {
            if !model.seen[i][a] {
                continue;
            }
            for s2 in 0..truth.n_states {
                let p_hat = match model.state_index(&State::Index(s2)) {
                    Some(j) => model.mdp.transition[i][a][j],
                    None => 0.0,
                };
                err = err.max((p_hat - truth.transition[s][a][s2]).abs());
            }
        }
    }
    err
}

#[test]
fn mle_consistency_with_data_size() {
    let mdp = reunion_dag();
    let pi0 = Policy::uniform(2);
    let small = sample_dataset(&mdp, &pi0, 100, 42).unwrap();
    let big = sample_dataset(&mdp, &pi0, 10_000, 43).unwrap();
    let m_small = fit_tabular_model(&small, None, 0.0, 1.0, 2).unwrap();
    let m_big = fit_tabular_model(&big, None, 0.0, 1.0, 2).unwrap();
    let e_small = max_transition_error(&m_small, &mdp);
    let e_big = max_transition_error(&m_big, &mdp);
    assert!(e_big < e_small, "error should shrink: {e_small} -> {e_big}");
    assert!(e_big < 0.02, "large-sample error {e_big}");
}

#[test]
fn model_q_matches_exact_q_for_exact_model() {
    for mdp in [t2(), reunion_dag()] {
        let pi1 = Policy::uniform(mdp.n_actions);
        let model = FittedModel::from_tabular(&mdp);
        let qm = q_from_model(&model, &pi1, mdp.horizon);
        let qe = exact_q(&mdp, &pi1, mdp.horizon).unwrap();
        for t in 1..=mdp.horizon {
            for s in 0..mdp.n_states {
                for a in 0..mdp.n_actions {
                    let st = State::Index(s);
                    assert!((qm.q(t, &st, a) - qe.q(t, &st, a)).abs() < 1e-12);
                }
            }
        }
        // Zero-horizon recursion is identically zero.
        let q0 = q_from_model(&model, &pi1, 0);
        assert_eq!(q0.q(1, &State::Index(0), 0), 0.0);
    }
}

fn bandit(rewards: Vec<f64>) -> TabularMDP {
    let n_actions = rewards.len();
    TabularMDP::new(
        "bandit",
        vec![vec![vec![1.0]; n_actions]],
        vec![rewards],
        None,
        vec![1.0],
        1.0,
        1,
        vec![false],
    )
    .unwrap()
}

#[test]
fn optimal_policy_examples() {
    // One action: that action everywhere.
    let one = bandit(vec![0.3]);
    let pi = optimal_policy(&FittedModel::from_tabular(&one), 1, false);
    assert_eq!(pi.prob(&State::Index(0), 0), 1.0);

    // Two-action bandit with rewards (0, 1).
    let two = bandit(vec![0.0, 1.0]);
    let model = FittedModel::from_tabular(&two);
    let pi = optimal_policy(&model, 1, false);
    assert_eq!(pi.prob(&State::Index(0), 1), 1.0);
    let pi_min = optimal_policy(&model, 1, true);
    assert_eq!(pi_min.prob(&State::Index(0), 0), 1.0);

    // The two-step tree: the greedy policy attains the best value 1, the
    // minimizing variant attains the worst value 0.
    let mdp = t2();
    let model = FittedModel::from_tabular(&mdp);
    let pi_max = optimal_policy(&model, 2, false);
    assert_eq!(exact_value(&mdp, &pi_max, 2).unwrap(), 1.0);
    let pi_min = optimal_policy(&model, 2, true);
    assert_eq!(exact_value(&mdp, &pi_min, 2).unwrap(), 0.0);
}

#[test]
fn baseline_constants() {
    let q = constant_baseline_q(-1.0, 1.0, 0.99, 100, 3);
    let s = State::Index(0);
    let expected = -(1.0 - 0.99f64.powi(100)) / 0.01;
    assert!((q.q(1, &s, 0) - expected).abs() < 1e-12);
    // Last step: a single undiscounted floor reward.
    assert!((q.q(100, &s, 2) - -1.0).abs() < 1e-12);

    let q0 = constant_baseline_q(-1.0, 0.5, 0.0, 10, 2);
    for t in 1..=10 {
        assert_eq!(q0.q(t, &s, 0), -0.5);
    }
    let q1 = constant_baseline_q(-2.0, 1.0, 1.0, 5, 2);
    assert_eq!(q1.q(1, &s, 0), -10.0);
    assert_eq!(q1.q(5, &s, 0), -2.0);
}

fn feature_traj(points: Vec<([f64; 2], usize, f64, [f64; 2])>) -> Dataset {
    let h = points.len();
    let final_state = State::Features(points.last().unwrap().3.to_vec());
    let steps = points
        .into_iter()
        .map(|(s, a, r, _)| Step {
            state: State::Features(s.to_vec()),
            action: a,
            reward: r,
            behavior_prob: 1.0,
        })
        .collect();
    Dataset::new(vec![Trajectory { steps, final_state }], h, meta()).unwrap()
}

#[test]
fn kernel_single_point_and_crop() {
    let data = feature_traj(vec![([0.0, 0.0], 0, 2.0, [0.5, 0.0])]);
    let pi1 = Policy::uniform(1);
    let q = kernel_q(&data, 0.25, &pi1, 1, 1, 1.0).unwrap();
    // At the support point with one step to go: the observed reward.
    assert!((q.q(1, &State::Features(vec![0.0, 0.0]), 0) - 2.0).abs() < 1e-12);
    // Beyond unit deviation in any one dimension: no mass at all.
    assert_eq!(q.q(1, &State::Features(vec![1.5, 0.0]), 0), 0.0);
    assert_eq!(q.q(1, &State::Features(vec![0.0, -1.01]), 0), 0.0);
    // Just inside the crop boundary mass survives.
    assert!(q.q(1, &State::Features(vec![0.9, 0.0]), 0) > 0.0);
    assert!(kernel_q(&data, 0.0, &pi1, 1, 1, 1.0).is_err());
}

#[test]
fn kernel_small_bandwidth_is_nearest_neighbor() {
    // Three support points with distinct rewards; at b -> 0 the estimate
    // collapses onto the nearest support point.
    let data = feature_traj(vec![
        ([0.0, 0.0], 0, 1.0, [0.0, 0.0]),
        ([0.5, 0.0], 0, 2.0, [0.5, 0.0]),
        ([0.0, 0.6], 0, 3.0, [0.0, 0.6]),
    ]);
    let pi1 = Policy::uniform(1);
    let q = kernel_q(&data, 1e-6, &pi1, 1, 1, 1.0).unwrap();
    // horizon 1 means only step 1 exists; future values are zero.
    assert!((q.q(1, &State::Features(vec![0.1, 0.1]), 0) - 1.0).abs() < 1e-9);
    assert!((q.q(1, &State::Features(vec![0.6, 0.1]), 0) - 2.0).abs() < 1e-9);
    assert!((q.q(1, &State::Features(vec![0.05, 0.55]), 0) - 3.0).abs() < 1e-9);
}

#[test]
fn kernel_value_backup_on_deterministic_chain() {
    // Two-step chain logged once: s0 -(r=1)-> s1 -(r=2)-> s2. With a tiny
    // bandwidth the backup gives Q(1, s0) = 1 + gamma * 2.
    let data = feature_traj(vec![([0.0, 0.0], 0, 1.0, [0.5, 0.5]), ([0.5, 0.5], 0, 2.0, [0.9, 0.9])]);
    let pi1 = Policy::uniform(1);
    let gamma = 0.9;
    let q = kernel_q(&data, 1e-6, &pi1, 2, 1, gamma).unwrap();
    let got = q.q(1, &State::Features(vec![0.0, 0.0]), 0);
    assert!((got - (1.0 + gamma * 2.0)).abs() < 1e-9, "got {got}");
}

#[test]
fn factored_fit_recovers_linear_reward_and_marginals() {
    let truth = make_factored_sim(2, 3, 2, 77).unwrap();
    let pi0 = Policy::uniform(2);
    let data = sample_dataset(&truth, &pi0, 3000, 78).unwrap();
    let model = fit_factored_model(&data, 2, 3, 2, &[0, 1], 1.0).unwrap();
    assert!(!model.regression_fallback);
    // Reward is exactly linear in both variables: regression is exact.
    let mut r_err: f64 = 0.0;
    let mut p_err: f64 = 0.0;
    for s in 0..truth.n_states {
        for a in 0..truth.n_actions {
            r_err = r_err.max((model.mdp.mean_reward[s][a] - truth.mean_reward[s][a]).abs());
            for s2 in 0..truth.n_states {
                p_err =
                    p_err.max((model.mdp.transition[s][a][s2] - truth.transition[s][a][s2]).abs());
            }
        }
    }
    assert!(r_err < 1e-9, "linear reward should be recovered exactly, err {r_err}");
    assert!(p_err < 0.05, "transition error {p_err}");

    // Excluding a reward-relevant variable leaves a visible residual.
    let misfit = fit_factored_model(&data, 2, 3, 2, &[0], 1.0).unwrap();
    let mut mis_err: f64 = 0.0;
    for s in 0..truth.n_states {
        for a in 0..truth.n_actions {
            mis_err = mis_err.max((misfit.mdp.mean_reward[s][a] - truth.mean_reward[s][a]).abs());
        }
    }
    assert!(mis_err > 1e-3, "misspecified reward fit should have residual, err {mis_err}");

    // More data, better marginals.
    let small = sample_dataset(&truth, &pi0, 100, 79).unwrap();
    let m_small = fit_factored_model(&small, 2, 3, 2, &[0, 1], 1.0).unwrap();
    let mut p_small: f64 = 0.0;
    for s in 0..truth.n_states {
        for a in 0..truth.n_actions {
            for s2 in 0..truth.n_states {
                p_small = p_small
                    .max((m_small.mdp.transition[s][a][s2] - truth.transition[s][a][s2]).abs());
            }
        }
    }
    assert!(p_err < p_small, "error should shrink with data: {p_small} -> {p_err}");
}

#[test]
fn discretized_fit_smoke() {
    use ope_core::envs::make_mountain_car;
    let env = make_mountain_car();
    let pi0 = Policy::uniform(3);
    let data = sample_dataset(&env, &pi0, 50, 5).unwrap();
    let disc = Discretizer::new(vec![64.0, 256.0]).unwrap();
    let model = fit_tabular_model(&data, Some(disc), -1.0, 0.99, 3).unwrap();
    let pi1 = Policy::uniform(3);
    let q = q_from_model(&model, &pi1, 100);
    let v = q.v(1, &data.trajectories[0].steps[0].state, &pi1);
    assert!(v.is_finite());
    let (lo, _) = model.mdp.reward_range();
    let min_value = lo * (1.0 - 0.99f64.powi(100)) / 0.01;
    assert!(v >= min_value - 1e-9 && v <= 1e-9);
}
