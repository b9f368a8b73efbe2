use crate::error::{OpeError, Result};
use crate::policy::Policy;
use crate::qfunction::QFunction;
use crate::state::State;
use crate::trajectory::Dataset;

/// Next-state expectations are truncated to this many highest-weight
/// support points per (next-state, action) pair.
pub const KERNEL_PARTICLES: usize = 5;

struct SupportPoint {
    features: Vec<f64>,
    reward: f64,
    next_features: Vec<f64>,
}

/// Nonparametric Q estimate from kernel averaging over observed
/// transitions. Weights are exp(-d/b) over Euclidean distance within an
/// action's support points, normalized per query, and cropped to zero when
/// any feature deviates by more than one unit. Backups run on the
/// support-point graph with truncated particle sets.
pub struct KernelQ {
    by_action: Vec<Vec<usize>>, // support indices per action
    points: Vec<SupportPoint>,
    bandwidth: f64,
    // value of each support point's next state with h remaining steps
    v_table: Vec<Vec<f64>>,
    gamma: f64,
    horizon: usize,
}

fn features_of(s: &State) -> Vec<f64> {
    match s {
        State::Features(f) => f.clone(),
        State::Index(i) => vec![*i as f64],
    }
}

/// Cropped distance: None if any dimension deviates by more than 1,
/// otherwise the Euclidean distance.
fn cropped_distance(a: &[f64], b: &[f64]) -> Option<f64> {
    let mut sq = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        if d.abs() > 1.0 {
            return None;
        }
        sq += d * d;
    }
    Some(sq.sqrt())
}

/// Normalized kernel weights of `query` against the given support points.
/// Distances are shifted by their minimum before exponentiating so the
/// b -> 0 limit degenerates to nearest-neighbor rather than underflowing.
fn weights(
    query: &[f64],
    support: &[usize],
    points: &[SupportPoint],
    bandwidth: f64,
) -> Vec<(usize, f64)> {
    let dists: Vec<(usize, f64)> = support
        .iter()
        .filter_map(|&i| cropped_distance(query, &points[i].features).map(|d| (i, d)))
        .collect();
    if dists.is_empty() {
        return Vec::new();
    }
    let d_min = dists.iter().map(|&(_, d)| d).fold(f64::INFINITY, f64::min);
    let mut out: Vec<(usize, f64)> = dists
        .into_iter()
        .map(|(i, d)| (i, (-(d - d_min) / bandwidth).exp()))
        .collect();
    let total: f64 = out.iter().map(|&(_, w)| w).sum();
    for (_, w) in &mut out {
        *w /= total;
    }
    out
}

fn top_particles(mut w: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    w.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    w.truncate(KERNEL_PARTICLES);
    let total: f64 = w.iter().map(|&(_, x)| x).sum();
    for (_, x) in &mut w {
        *x /= total;
    }
    w
}

pub fn kernel_q(
    dataset: &Dataset,
    bandwidth: f64,
    pi1: &Policy,
    horizon: usize,
    n_actions: usize,
    gamma: f64,
) -> Result<KernelQ> {
    if bandwidth <= 0.0 {
        return Err(OpeError::InvalidArgument(format!(
            "kernel bandwidth {bandwidth} must be positive"
        )));
    }
    let mut points = Vec::new();
    let mut by_action = vec![Vec::new(); n_actions];
    for traj in &dataset.trajectories {
        for t in 0..traj.steps.len() {
            let step = &traj.steps[t];
            if step.action >= n_actions {
                return Err(OpeError::InvalidArgument(format!(
                    "action {} outside the declared {n_actions} actions",
                    step.action
                )));
            }
            by_action[step.action].push(points.len());
            points.push(SupportPoint {
                features: features_of(&step.state),
                reward: step.reward,
                next_features: features_of(traj.state_at(t + 2)),
            });
        }
    }
    if points.is_empty() {
        return Err(OpeError::InvalidArgument("kernel fit needs a nonempty dataset".into()));
    }

    // neighbors[i][a]: truncated particle set for point i's next state.
    let neighbors: Vec<Vec<Vec<(usize, f64)>>> = points
        .iter()
        .map(|p| {
            (0..n_actions)
                .map(|a| top_particles(weights(&p.next_features, &by_action[a], &points, bandwidth)))
                .collect()
        })
        .collect();
    let next_probs: Vec<Vec<f64>> = points
        .iter()
        .map(|p| pi1.action_probs(&State::Features(p.next_features.clone())))
        .collect();

    // v_table[h][i]: value of point i's next state with h steps remaining.
    let mut v_table = vec![vec![0.0; points.len()]];
    for h in 1..horizon {
        let prev = &v_table[h - 1];
        let v_h: Vec<f64> = (0..points.len())
            .map(|i| {
                (0..n_actions)
                    .map(|a| {
                        let q: f64 = neighbors[i][a]
                            .iter()
                            .map(|&(j, w)| w * (points[j].reward + gamma * prev[j]))
                            .sum();
                        next_probs[i][a] * q
                    })
                    .sum()
            })
            .collect();
        v_table.push(v_h);
    }

    Ok(KernelQ { by_action, points, bandwidth, v_table, gamma, horizon })
}

impl QFunction for KernelQ {
    fn q(&self, t: usize, s: &State, a: usize) -> f64 {
        assert!(t >= 1 && t <= self.horizon, "step {t} outside 1..={}", self.horizon);
        let query = features_of(s);
        let remaining = self.horizon - t;
        let v_next = &self.v_table[remaining];
        weights(&query, &self.by_action[a], &self.points, self.bandwidth)
            .iter()
            .map(|&(i, w)| w * (self.points[i].reward + self.gamma * v_next[i]))
            .sum()
    }

    fn n_actions(&self) -> usize {
        self.by_action.len()
    }
}
