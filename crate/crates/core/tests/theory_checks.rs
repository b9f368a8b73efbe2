//! The variance recursion, estimator lower bounds, and bias bound, all
//! cross-checked against brute-force enumeration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use ope_core::enumeration::{enumerate_trajectories, enumerated_variance};
use ope_core::envs::{
    make_random_dag_mdp, make_random_tree_mdp, relabel_policy, unroll_to_tree,
};
use ope_core::fixtures::{reunion_dag, t2, t2_noisy};
use ope_core::mdp::{exact_q, exact_value};
use ope_core::model::FittedModel;
use ope_core::qfunction::{TabularQ, ZeroQ};
use ope_core::theory::{
    cr_bound_dag, cr_bound_tree, dr_variance_exact, drv2_bias_bound, estimator_mse,
    model_l1_epsilon,
};
use ope_core::{dr, is_stepwise, Policy, QFunction, TabularMDP};

fn random_policy(mdp: &TabularMDP, rng: &mut impl Rng) -> Policy {
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
    Policy::tabular(probs).unwrap()
}

fn random_q(mdp: &TabularMDP, horizon: usize, rng: &mut impl Rng) -> TabularQ {
    let table = (0..horizon)
        .map(|_| {
            (0..mdp.n_states)
                .map(|_| (0..mdp.n_actions).map(|_| rng.gen_range(-2.0..2.0)).collect())
                .collect()
        })
        .collect();
    TabularQ::new(table, mdp.n_actions)
}

#[test]
fn variance_zero_with_exact_q_on_deterministic_mdp() {
    let mdp = t2();
    let pi0 = Policy::uniform(2);
    let pi1 = Policy::constant(0, 4, 2);
    let q_true = exact_q(&mdp, &pi1, 2).unwrap();
    let b = dr_variance_exact(&mdp, &pi0, &pi1, &q_true, 2).unwrap();
    assert!(b.total.abs() < 1e-12, "total {}", b.total);
}

#[test]
fn variance_recursion_matches_enumeration() {
    let mut fixtures: Vec<TabularMDP> = vec![t2(), t2_noisy(0.5), reunion_dag()];
    for i in 0..20 {
        fixtures.push(make_random_tree_mdp(2, 2, 2 + (i % 2), 500 + i as u64).unwrap());
    }
    for i in 0..10 {
        fixtures.push(make_random_dag_mdp(&[3, 3, 2], 2, 600 + i as u64).unwrap());
    }
    for (i, mdp) in fixtures.iter().enumerate() {
        let horizon = mdp.horizon;
        let pi0 = Policy::uniform(mdp.n_actions);
        let mut rng = ChaCha12Rng::seed_from_u64(700 + i as u64);
        let pi1 = random_policy(mdp, &mut rng);
        let outcomes = enumerate_trajectories(mdp, &pi0, horizon, 2_000_000).unwrap();

        let zero = ZeroQ { n_actions: mdp.n_actions };
        let q_true = exact_q(mdp, &pi1, horizon).unwrap();
        let q_rand = random_q(mdp, horizon, &mut rng);
        let qhats: [&dyn QFunction; 3] = [&zero, &q_true, &q_rand];
        for qhat in qhats {
            let exact = dr_variance_exact(mdp, &pi0, &pi1, qhat, horizon).unwrap();
            let brute =
                enumerated_variance(&outcomes, |t| dr(t, qhat, &pi1, mdp.gamma)).unwrap();
            assert!(
                (exact.total - brute).abs() <= 1e-10,
                "fixture {i}: recursion {} vs enumeration {brute}",
                exact.total
            );
            // Component bookkeeping: total is the sum of all terms, and at
            // each step the tail matches the explicit future term.
            let sum: f64 = (0..horizon)
                .map(|t| exact.state_terms[t] + exact.delta_terms[t] + exact.reward_terms[t])
                .sum();
            assert!((exact.total - sum).abs() <= 1e-12);
            assert!((exact.state_terms[0]
                + exact.delta_terms[0]
                + exact.reward_terms[0]
                + exact.future_terms[0]
                - exact.total)
                .abs()
                <= 1e-12);
            for t in 0..horizon {
                assert!(exact.state_terms[t] >= -1e-12);
                assert!(exact.delta_terms[t] >= -1e-12);
                assert!(exact.reward_terms[t] >= -1e-12);
            }
        }

        // The step-IS special case: zero Q makes the variances identical.
        let exact = dr_variance_exact(mdp, &pi0, &pi1, &zero, horizon).unwrap();
        let brute =
            enumerated_variance(&outcomes, |t| is_stepwise(t, &pi1, mdp.gamma)).unwrap();
        assert!((exact.total - brute).abs() <= 1e-10);
    }
}

#[test]
fn good_q_minimizes_variance_on_random_trees() {
    for i in 0..10 {
        let mdp = make_random_tree_mdp(2, 2, 2, 800 + i).unwrap();
        let pi0 = Policy::uniform(2);
        let mut rng = ChaCha12Rng::seed_from_u64(900 + i);
        let pi1 = random_policy(&mdp, &mut rng);
        let q_true = exact_q(&mdp, &pi1, 2).unwrap();
        let zero = ZeroQ { n_actions: 2 };
        let q_rand = random_q(&mdp, 2, &mut rng);
        let v_true = dr_variance_exact(&mdp, &pi0, &pi1, &q_true, 2).unwrap().total;
        let v_zero = dr_variance_exact(&mdp, &pi0, &pi1, &zero, 2).unwrap().total;
        let v_rand = dr_variance_exact(&mdp, &pi0, &pi1, &q_rand, 2).unwrap().total;
        assert!(v_true <= v_zero + 1e-12);
        assert!(v_true <= v_rand + 1e-12);
    }
}

#[test]
fn tree_bound_equals_dr_variance_with_true_q() {
    for i in 0u64..20 {
        let mdp = make_random_tree_mdp(2, 2, 2 + (i as usize % 2), 1000 + i).unwrap();
        let pi0 = Policy::uniform(2);
        let mut rng = ChaCha12Rng::seed_from_u64(1100 + i);
        let pi1 = random_policy(&mdp, &mut rng);
        let q_true = exact_q(&mdp, &pi1, mdp.horizon).unwrap();
        let bound = cr_bound_tree(&mdp, &pi0, &pi1).unwrap();
        let var = dr_variance_exact(&mdp, &pi0, &pi1, &q_true, mdp.horizon).unwrap().total;
        assert!((bound - var).abs() <= 1e-10, "tree {i}: {bound} vs {var}");
    }
}

#[test]
fn tree_bound_trivial_cases() {
    let mdp = t2();
    let pi0 = Policy::uniform(2);
    let pi1 = Policy::constant(0, 4, 2);
    // Deterministic transitions and rewards: no variance at all.
    assert!(cr_bound_tree(&mdp, &pi0, &pi1).unwrap().abs() < 1e-15);
    // On-policy with a deterministic policy: every action is forced, so the
    // bound equals the enumerated variance of the plain return. (With a
    // stochastic policy the bound stays below it, since it conditions on the
    // sampled actions and so excludes action-choice variance.)
    let noisy = t2_noisy(0.4);
    let det = Policy::constant(0, 4, 2);
    let outcomes = enumerate_trajectories(&noisy, &det, 2, 1000).unwrap();
    let mc_var =
        enumerated_variance(&outcomes, |t| Ok(t.discounted_return(1.0))).unwrap();
    let bound = cr_bound_tree(&noisy, &det, &det).unwrap();
    assert!((bound - mc_var).abs() <= 1e-12);
    // And with a stochastic policy the bound is no larger than that variance.
    let outcomes = enumerate_trajectories(&noisy, &pi0, 2, 1000).unwrap();
    let on_var =
        enumerated_variance(&outcomes, |t| Ok(t.discounted_return(1.0))).unwrap();
    let on_bound = cr_bound_tree(&noisy, &pi0, &pi0).unwrap();
    assert!(on_bound <= on_var + 1e-12, "{on_bound} vs {on_var}");
}

#[test]
fn dag_bound_on_trees_and_reunions() {
    // Tree-shaped input: the occupancy ratio is the cumulative ratio.
    for i in 0..5 {
        let mdp = make_random_tree_mdp(2, 2, 2, 1200 + i).unwrap();
        let pi0 = Policy::uniform(2);
        let mut rng = ChaCha12Rng::seed_from_u64(1300 + i);
        let pi1 = random_policy(&mdp, &mut rng);
        let tree = cr_bound_tree(&mdp, &pi0, &pi1).unwrap();
        let dag = cr_bound_dag(&mdp, &pi0, &pi1).unwrap();
        assert!((tree - dag).abs() <= 1e-10, "{tree} vs {dag}");
    }

    // Reunion fixture: shared second-layer states make the bound strictly
    // smaller than the bound on the tree unrolling.
    let dag = reunion_dag();
    let pi0 = Policy::uniform(2);
    let mut rng = ChaCha12Rng::seed_from_u64(1400);
    let pi1 = random_policy(&dag, &mut rng);
    let (tree, origin) = unroll_to_tree(&dag).unwrap();
    let pi1_tree = relabel_policy(&pi1, &origin, 2).unwrap();
    let pi0_tree = relabel_policy(&pi0, &origin, 2).unwrap();
    // Unrolling preserves the evaluation problem itself.
    let v_dag = exact_value(&dag, &pi1, 2).unwrap();
    let v_tree = exact_value(&tree, &pi1_tree, 2).unwrap();
    assert!((v_dag - v_tree).abs() <= 1e-12);
    let b_dag = cr_bound_dag(&dag, &pi0, &pi1).unwrap();
    let b_tree = cr_bound_tree(&tree, &pi0_tree, &pi1_tree).unwrap();
    assert!(
        b_dag < b_tree - 1e-6,
        "reunion bound {b_dag} should be strictly below the unrolled bound {b_tree}"
    );

    // A chain (deterministic transitions, so histories never reunite) is
    // its own unrolling: the two bounds agree exactly.
    let chain = t2_noisy(0.6);
    let pi1c = random_policy(&chain, &mut rng);
    let (chain_tree, origin) = unroll_to_tree(&chain).unwrap();
    let pi1_t = relabel_policy(&pi1c, &origin, 2).unwrap();
    let pi0_t = relabel_policy(&pi0, &origin, 2).unwrap();
    let b_chain = cr_bound_dag(&chain, &pi0, &pi1c).unwrap();
    let b_chain_tree = cr_bound_tree(&chain_tree, &pi0_t, &pi1_t).unwrap();
    assert!((b_chain - b_chain_tree).abs() <= 1e-10);
    assert!((b_chain - cr_bound_tree(&chain, &pi0, &pi1c).unwrap()).abs() <= 1e-10);

    // Deterministic DAG: zero bound.
    let det = t2();
    assert!(cr_bound_dag(&det, &pi0, &Policy::constant(0, 4, 2)).unwrap().abs() < 1e-15);
}

#[test]
fn tree_bound_rejects_non_trees() {
    let dag = reunion_dag();
    let pi0 = Policy::uniform(2);
    assert!(cr_bound_tree(&dag, &pi0, &pi0).is_err());
}

#[test]
fn bias_bound_closed_form() {
    assert_eq!(drv2_bias_bound(0.0, 5.0, 0.9, 10).unwrap(), 0.0);
    assert_eq!(drv2_bias_bound(0.3, 5.0, 0.0, 10).unwrap(), 0.0);
    let b = drv2_bias_bound(0.1, 1.0, 0.5, 2).unwrap();
    assert!((b - 0.075).abs() < 1e-15);
    assert!(drv2_bias_bound(-0.1, 1.0, 0.5, 2).is_err());
}

#[test]
fn l1_epsilon_examples() {
    let mdp = t2();
    let model = FittedModel::from_tabular(&mdp);
    assert_eq!(model_l1_epsilon(&model, &mdp).unwrap(), 0.0);

    // Move 0.1 of mass within one row: L1 distance 0.2.
    let mut perturbed = FittedModel::from_tabular(&mdp);
    perturbed.mdp.transition[0][0][1] -= 0.1;
    perturbed.mdp.transition[0][0][2] += 0.1;
    assert!((model_l1_epsilon(&perturbed, &mdp).unwrap() - 0.2).abs() < 1e-12);

    // Independent double-loop oracle on a random perturbation.
    let mdp = make_random_dag_mdp(&[2, 2], 2, 1600).unwrap();
    let mut model = FittedModel::from_tabular(&mdp);
    let mut rng = ChaCha12Rng::seed_from_u64(1601);
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let row = &mut model.mdp.transition[s][a];
            let shift = rng.gen_range(0.0..0.05);
            let hi = (0..row.len()).max_by(|&i, &j| row[i].total_cmp(&row[j])).unwrap();
            let lo = (0..row.len()).min_by(|&i, &j| row[i].total_cmp(&row[j])).unwrap();
            if hi != lo && row[hi] > shift {
                row[hi] -= shift;
                row[lo] += shift;
            }
        }
    }
    let mut oracle: f64 = 0.0;
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let mut l1 = 0.0;
            for s2 in 0..mdp.n_states {
                l1 += (model.mdp.transition[s][a][s2] - mdp.transition[s][a][s2]).abs();
            }
            oracle = oracle.max(l1);
        }
    }
    assert!((model_l1_epsilon(&model, &mdp).unwrap() - oracle).abs() < 1e-15);
}

#[test]
fn mse_report_sanity() {
    // A synthetic unbiased estimator with known noise.
    let mut rng = ChaCha12Rng::seed_from_u64(1700);
    let truth = 2.0;
    let rep = estimator_mse(truth, 4000, |_| Ok(truth + rng.gen_range(-0.5..0.5))).unwrap();
    assert!(rep.bias.abs() < 3.0 * rep.bias_stderr + 1e-3);
    // Uniform(-0.5, 0.5) noise: rmse ~ sqrt(1/12) = 0.2887.
    assert!((rep.rmse - (1.0f64 / 12.0).sqrt()).abs() < 0.02);
    assert!((rep.rel_rmse - rep.rmse / 2.0).abs() < 1e-12);
    assert!(estimator_mse(1.0, 1, |_| Ok(1.0)).is_err());
}
