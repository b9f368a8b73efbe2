//! Tiny hand-built MDPs used throughout the test and verification suites.

use crate::mdp::{RewardDist, TabularMDP};

fn det_row(n: usize, target: usize) -> Vec<f64> {
    let mut row = vec![0.0; n];
    row[target] = 1.0;
    row
}

/// Two-step deterministic tree with two actions. Action 0 at the second
/// step earns reward 1, everything else earns 0, so the always-action-0
/// policy has value 1 and the uniform policy has value 0.5. The four
/// trajectory types make hand enumeration trivial.
pub fn t2() -> TabularMDP {
    // states: 0 = root, 1 = after action 0, 2 = after action 1, 3 = absorbing
    let n = 4;
    let transition = vec![
        vec![det_row(n, 1), det_row(n, 2)],
        vec![det_row(n, 3), det_row(n, 3)],
        vec![det_row(n, 3), det_row(n, 3)],
        vec![det_row(n, 3), det_row(n, 3)],
    ];
    let mean_reward = vec![
        vec![0.0, 0.0],
        vec![1.0, 0.0],
        vec![1.0, 0.0],
        vec![0.0, 0.0],
    ];
    TabularMDP::new(
        "t2",
        transition,
        mean_reward,
        None,
        vec![1.0, 0.0, 0.0, 0.0],
        1.0,
        2,
        vec![false, false, false, true],
    )
    .expect("t2 fixture is valid")
}

/// T2 with terminal reward noise at one leaf: the (state 1, action 0)
/// reward becomes 1 +/- d with equal probability.
pub fn t2_noisy(d: f64) -> TabularMDP {
    let mut mdp = t2();
    let mut noise = vec![vec![None, None]; mdp.n_states];
    noise[1][0] =
        Some(RewardDist::new(vec![1.0 - d, 1.0 + d], vec![0.5, 0.5]).expect("valid dist"));
    mdp.reward_noise = Some(noise);
    mdp.name = "t2_noisy".into();
    mdp
}

/// Two-layer DAG in which both first-layer states can reach both
/// second-layer states, so the trajectory distribution reunions. The
/// occupancy ratio of the DAG lower bound then differs from the cumulative
/// importance ratio of the tree-unrolled bound.
pub fn reunion_dag() -> TabularMDP {
    // states: 0, 1 = first layer; 2, 3 = second layer; 4 = absorbing
    let n = 5;
    let absorbing = det_row(n, 4);
    let transition = vec![
        vec![
            vec![0.0, 0.0, 0.7, 0.3, 0.0],
            vec![0.0, 0.0, 0.2, 0.8, 0.0],
        ],
        vec![
            vec![0.0, 0.0, 0.4, 0.6, 0.0],
            vec![0.0, 0.0, 0.9, 0.1, 0.0],
        ],
        vec![absorbing.clone(), absorbing.clone()],
        vec![absorbing.clone(), absorbing.clone()],
        vec![absorbing.clone(), absorbing],
    ];
    let mean_reward = vec![
        vec![0.0, 0.0],
        vec![0.0, 0.0],
        vec![1.0, 0.0],
        vec![2.0, 0.5],
        vec![0.0, 0.0],
    ];
    let mut noise = vec![vec![None, None]; n];
    let dist = |values: Vec<f64>| RewardDist::new(values, vec![0.5, 0.5]).expect("valid dist");
    noise[2][0] = Some(dist(vec![0.0, 2.0]));
    noise[2][1] = Some(dist(vec![-1.0, 1.0]));
    noise[3][0] = Some(dist(vec![0.0, 4.0]));
    noise[3][1] = Some(dist(vec![0.0, 1.0]));
    TabularMDP::new(
        "reunion_dag",
        transition,
        mean_reward,
        Some(noise),
        vec![0.5, 0.5, 0.0, 0.0, 0.0],
        1.0,
        2,
        vec![false, false, false, false, true],
    )
    .expect("reunion fixture is valid")
}
