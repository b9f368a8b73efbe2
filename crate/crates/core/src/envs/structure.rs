use crate::error::{OpeError, Result};
use crate::mdp::TabularMDP;
use crate::policy::Policy;

const UNROLL_GUARD: usize = 1_000_000;

/// Layered reachability: `layers[t]` is the set of states occupiable at
/// step t+1. Errors if any non-absorbing state occurs at two different
/// steps.
pub fn layered_reachability(mdp: &TabularMDP) -> Result<Vec<Vec<usize>>> {
    let mut seen_at: Vec<Option<usize>> = vec![None; mdp.n_states];
    let mut layers = Vec::with_capacity(mdp.horizon);
    let mut current: Vec<usize> = (0..mdp.n_states)
        .filter(|&s| mdp.initial_dist[s] > 0.0)
        .collect();
    for t in 0..mdp.horizon {
        for &s in &current {
            match seen_at[s] {
                None => seen_at[s] = Some(t),
                Some(prev) if prev != t => {
                    return Err(OpeError::InvalidMdp(format!(
                        "state {s} occurs at steps {} and {}; not layered",
                        prev + 1,
                        t + 1
                    )));
                }
                _ => {}
            }
        }
        layers.push(current.clone());
        if t + 1 < mdp.horizon {
            let mut next = vec![false; mdp.n_states];
            for &s in &current {
                for a in 0..mdp.n_actions {
                    for (s2, &p) in mdp.transition[s][a].iter().enumerate() {
                        if p > 0.0 {
                            next[s2] = true;
                        }
                    }
                }
            }
            current = (0..mdp.n_states).filter(|&s| next[s]).collect();
        }
    }
    Ok(layers)
}

/// Verify the tree property: every reachable state is reached through a
/// unique history, i.e. layered with a unique (state, action) predecessor.
pub fn verify_tree(mdp: &TabularMDP) -> Result<Vec<Vec<usize>>> {
    let layers = layered_reachability(mdp)?;
    for t in 1..layers.len() {
        let mut pred: Vec<Option<(usize, usize)>> = vec![None; mdp.n_states];
        for &s in &layers[t - 1] {
            for a in 0..mdp.n_actions {
                for (s2, &p) in mdp.transition[s][a].iter().enumerate() {
                    if p > 0.0 && !mdp.terminal_flags[s2] {
                        match pred[s2] {
                            None => pred[s2] = Some((s, a)),
                            Some(existing) if existing != (s, a) => {
                                return Err(OpeError::InvalidMdp(format!(
                                    "state {s2} is reachable from both {existing:?} and \
                                     ({s},{a}); not a tree"
                                )));
                            }
                            _ => {}
                        }
                    }
                }
            }
        }
    }
    Ok(layers)
}

/// Unroll a layered MDP into its tree form: one state per reachable
/// history prefix. Returns the tree and the map from tree state to
/// original state, so policies can be relabeled onto the tree.
pub fn unroll_to_tree(mdp: &TabularMDP) -> Result<(TabularMDP, Vec<usize>)> {
    layered_reachability(mdp)?;
    // Node 0.. are history states in BFS order; transitions are rebuilt
    // level by level.
    let mut origin: Vec<usize> = Vec::new();
    let mut level: Vec<usize> = Vec::new(); // node ids of the current level
    let mut initial_probs: Vec<f64> = Vec::new();
    for s in 0..mdp.n_states {
        if mdp.initial_dist[s] > 0.0 {
            level.push(origin.len());
            origin.push(s);
            initial_probs.push(mdp.initial_dist[s]);
        }
    }
    // edges[node][a] = list of (child_node, prob)
    let mut edges: Vec<Vec<Vec<(usize, f64)>>> = Vec::new();
    for _t in 1..mdp.horizon {
        let mut next_level = Vec::new();
        for &node in &level {
            while edges.len() <= node {
                edges.push(vec![Vec::new(); mdp.n_actions]);
            }
            let s = origin[node];
            for a in 0..mdp.n_actions {
                for (s2, &p) in mdp.transition[s][a].iter().enumerate() {
                    if p > 0.0 && !mdp.terminal_flags[s2] {
                        let child = origin.len();
                        if child >= UNROLL_GUARD {
                            return Err(OpeError::SizeGuard(format!(
                                "unrolled tree exceeds {UNROLL_GUARD} histories"
                            )));
                        }
                        origin.push(s2);
                        next_level.push(child);
                        edges[node][a].push((child, p));
                    }
                }
            }
        }
        level = next_level;
    }
    while edges.len() < origin.len() {
        edges.push(vec![Vec::new(); mdp.n_actions]);
    }

    let n = origin.len() + 1;
    let absorbing = n - 1;
    let mut transition = vec![vec![vec![0.0; n]; mdp.n_actions]; n];
    let mut mean_reward = vec![vec![0.0; mdp.n_actions]; n];
    let mut noise = vec![vec![None; mdp.n_actions]; n];
    let mut initial_dist = vec![0.0; n];
    let mut terminal_flags = vec![false; n];
    terminal_flags[absorbing] = true;
    for a in 0..mdp.n_actions {
        transition[absorbing][a][absorbing] = 1.0;
    }
    for (node, &s) in origin.iter().enumerate() {
        for a in 0..mdp.n_actions {
            mean_reward[node][a] = mdp.mean_reward[s][a];
            noise[node][a] = mdp.reward_dist(s, a).cloned();
            if edges[node][a].is_empty() {
                transition[node][a][absorbing] = 1.0;
            } else {
                for &(child, p) in &edges[node][a] {
                    transition[node][a][child] = p;
                }
                let total: f64 = transition[node][a].iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(OpeError::InvalidMdp(format!(
                        "unrolled row for node {node} action {a} sums to {total}; \
                         terminal transitions must not mix with layer transitions"
                    )));
                }
                // absorb rounding drift
                let heaviest = edges[node][a]
                    .iter()
                    .max_by(|x, y| x.1.total_cmp(&y.1))
                    .map(|&(c, _)| c)
                    .unwrap();
                transition[node][a][heaviest] += 1.0 - total;
            }
        }
    }
    let mut roots = 0;
    for s in 0..mdp.n_states {
        if mdp.initial_dist[s] > 0.0 {
            initial_dist[roots] = initial_probs[roots];
            let _ = s;
            roots += 1;
        }
    }
    origin.push(usize::MAX); // the absorbing node has no original state
    let tree = TabularMDP::new(
        format!("{}_unrolled", mdp.name),
        transition,
        mean_reward,
        Some(noise),
        initial_dist,
        mdp.gamma,
        mdp.horizon,
        terminal_flags,
    )?;
    Ok((tree, origin))
}

/// Relabel a tabular policy on the original MDP onto an unrolled tree via
/// the origin map produced by `unroll_to_tree`.
pub fn relabel_policy(policy: &Policy, origin: &[usize], n_actions: usize) -> Result<Policy> {
    let probs = origin
        .iter()
        .map(|&s| {
            if s == usize::MAX {
                vec![1.0 / n_actions as f64; n_actions]
            } else {
                policy.action_probs(&crate::state::State::Index(s))
            }
        })
        .collect();
    Policy::tabular(probs)
}
