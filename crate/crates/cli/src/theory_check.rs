//! Enumeration suite: verifies the estimator identities and variance theory
//! on small MDPs by brute force and reports the largest deviation found.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use ope_core::enumeration::{enumerate_trajectories, enumerated_mean, enumerated_variance};
use ope_core::fixtures::{reunion_dag, t2, t2_noisy};
use ope_core::numeric::derive_seed;
use ope_core::{
    cr_bound_tree, dr, dr_variance_exact, dr_v2, envs::make_random_dag_mdp,
    envs::make_random_tree_mdp, exact_q, exact_value, is_stepwise, is_trajwise, FittedModel,
    Policy, QFunction, Result, TabularMDP, TabularQ, ZeroQ,
};

const MAX_OUTCOMES: usize = 200_000;

fn random_policy(mdp: &TabularMDP, rng: &mut ChaCha12Rng) -> Policy {
    let probs = (0..mdp.n_states)
        .map(|_| {
            let mut row: Vec<f64> = (0..mdp.n_actions).map(|_| rng.gen::<f64>() + 0.05).collect();
            let total: f64 = row.iter().sum();
            for x in &mut row {
                *x /= total;
            }
            let drift = 1.0 - row.iter().sum::<f64>();
            row[0] += drift;
            row
        })
        .collect();
    Policy::tabular(probs).expect("rows are normalized")
}

fn random_q(mdp: &TabularMDP, horizon: usize, rng: &mut ChaCha12Rng) -> TabularQ {
    let table = (0..horizon)
        .map(|_| {
            (0..mdp.n_states)
                .map(|_| (0..mdp.n_actions).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect())
                .collect()
        })
        .collect();
    TabularQ::new(table, mdp.n_actions)
}

/// Largest unbiasedness deviation over the estimator family on one MDP:
/// |E_{pi0}[estimate] - exact_value(pi1)| for trajectory-wise and step-wise
/// importance sampling, the doubly robust recursion with exact, random, and
/// zero Q functions, and the transition-aware variant with the true model.
fn unbiasedness_deviation(mdp: &TabularMDP, seed: u64) -> Result<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let pi0 = Policy::uniform(mdp.n_actions);
    let pi1 = random_policy(mdp, &mut rng);
    let h = mdp.horizon;
    let truth = exact_value(mdp, &pi1, h)?;
    let outcomes = enumerate_trajectories(mdp, &pi0, h, MAX_OUTCOMES)?;

    let mut worst: f64 = 0.0;
    let mut check = |v: f64| worst = worst.max((v - truth).abs());
    check(enumerated_mean(&outcomes, |t| is_trajwise(t, &pi1, mdp.gamma))?);
    check(enumerated_mean(&outcomes, |t| is_stepwise(t, &pi1, mdp.gamma))?);
    let q_true = exact_q(mdp, &pi1, h)?;
    let q_rand = random_q(mdp, h, &mut rng);
    let q_zero = ZeroQ { n_actions: mdp.n_actions };
    for qhat in [&q_true as &dyn QFunction, &q_rand, &q_zero] {
        check(enumerated_mean(&outcomes, |t| dr(t, qhat, &pi1, mdp.gamma))?);
    }
    let model = FittedModel::from_tabular(mdp);
    let model_q = ope_core::q_from_model(&model, &pi1, h);
    check(enumerated_mean(&outcomes, |t| dr_v2(t, &model, &model_q, &pi1, mdp.gamma))?);
    Ok(worst)
}

/// Largest gap between the exact variance recursion and the brute-force
/// enumerated variance of the doubly robust estimator, over three Q choices.
fn variance_deviation(mdp: &TabularMDP, seed: u64) -> Result<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let pi0 = Policy::uniform(mdp.n_actions);
    let pi1 = random_policy(mdp, &mut rng);
    let h = mdp.horizon;
    let outcomes = enumerate_trajectories(mdp, &pi0, h, MAX_OUTCOMES)?;
    let q_true = exact_q(mdp, &pi1, h)?;
    let q_rand = random_q(mdp, h, &mut rng);
    let q_zero = ZeroQ { n_actions: mdp.n_actions };
    let mut worst: f64 = 0.0;
    for qhat in [&q_true as &dyn QFunction, &q_rand, &q_zero] {
        let exact = dr_variance_exact(mdp, &pi0, &pi1, qhat, h)?.total;
        let brute = enumerated_variance(&outcomes, |t| dr(t, qhat, &pi1, mdp.gamma))?;
        worst = worst.max((exact - brute).abs());
    }
    Ok(worst)
}

/// Gap between the closed-form variance lower bound on tree MDPs and the
/// doubly robust variance with the true Q function, which should attain it.
fn tree_bound_deviation(tree: &TabularMDP, seed: u64) -> Result<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let pi0 = Policy::uniform(tree.n_actions);
    let pi1 = random_policy(tree, &mut rng);
    let q_true = exact_q(tree, &pi1, tree.horizon)?;
    let bound = cr_bound_tree(tree, &pi0, &pi1)?;
    let var = dr_variance_exact(tree, &pi0, &pi1, &q_true, tree.horizon)?.total;
    Ok((bound - var).abs())
}

/// Runs the whole suite and returns the maximum deviation across all checks.
pub fn run_theory_check(seed: u64, out: &mut dyn Write) -> Result<f64> {
    let mut fixtures: Vec<(String, TabularMDP)> = vec![
        ("t2".into(), t2()),
        ("t2_noisy".into(), t2_noisy(0.6)),
        ("reunion_dag".into(), reunion_dag()),
    ];
    for i in 0..10u64 {
        let s = derive_seed(seed, 10 + i);
        fixtures.push((
            format!("tree_{i}"),
            make_random_tree_mdp(2, 2, 2 + (i as usize % 2), s)?,
        ));
    }
    for i in 0..5u64 {
        let s = derive_seed(seed, 50 + i);
        fixtures.push((format!("dag_{i}"), make_random_dag_mdp(&[3, 3, 2], 2, s)?));
    }

    let mut worst_unbiased: f64 = 0.0;
    let mut worst_variance: f64 = 0.0;
    let mut worst_bound: f64 = 0.0;
    for (i, (name, mdp)) in fixtures.iter().enumerate() {
        let s = derive_seed(seed, 100 + i as u64);
        let u = unbiasedness_deviation(mdp, s)?;
        let v = variance_deviation(mdp, s + 1)?;
        worst_unbiased = worst_unbiased.max(u);
        worst_variance = worst_variance.max(v);
        if ope_core::envs::verify_tree(mdp).is_ok() {
            let b = tree_bound_deviation(mdp, s + 2)?;
            worst_bound = worst_bound.max(b);
            writeln!(out, "{name}: unbiasedness {u:.3e} variance {v:.3e} bound {b:.3e}")?;
        } else {
            writeln!(out, "{name}: unbiasedness {u:.3e} variance {v:.3e}")?;
        }
    }
    let max_dev = worst_unbiased.max(worst_variance).max(worst_bound);
    writeln!(out, "max unbiasedness deviation: {worst_unbiased:.3e}")?;
    writeln!(out, "max variance deviation: {worst_variance:.3e}")?;
    writeln!(out, "max tree-bound deviation: {worst_bound:.3e}")?;
    writeln!(out, "max deviation: {max_dev:.3e}")?;
    Ok(max_dev)
}
