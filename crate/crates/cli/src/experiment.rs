//! Environment construction and the point-estimator accuracy experiment.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use ope_core::envs::Discretizer;
use ope_core::envs::{
    make_factored_sim, make_mountain_car, make_random_dag_mdp, make_random_tree_mdp,
    make_sailing, MountainCar, Sailing, SAILING_R_MIN,
};
use ope_core::estimators::fold_ranges;
use ope_core::numeric::derive_seed;
use ope_core::{
    constant_baseline_q, dr, evaluate, exact_value, fit_tabular_model, mix_policies,
    monte_carlo_value, optimal_policy, q_from_model, sample_dataset, ConstantQ, Crop, Dataset,
    Environment, EvalParams, FittedModel, Method, ModelQ, MseReport, OpeError, Policy, QFunction,
    Result, State, TabularMDP, TerminalZeroQ,
};

use crate::config::Config;

/// A configured environment plus the metadata the harness needs around it.
pub enum BuiltEnv {
    Tabular(TabularMDP),
    MountainCar(MountainCar),
    Sailing(Sailing),
}

impl BuiltEnv {
    pub fn env(&self) -> &dyn Environment {
        match self {
            BuiltEnv::Tabular(m) => m,
            BuiltEnv::MountainCar(e) => e,
            BuiltEnv::Sailing(e) => e,
        }
    }

    /// The exact MDP, when one exists (tabular environments only).
    pub fn mdp(&self) -> Option<&TabularMDP> {
        match self {
            BuiltEnv::Tabular(m) => Some(m),
            _ => None,
        }
    }

    /// State aggregation used by model fitting on continuous state vectors.
    pub fn discretizer(&self) -> Result<Option<Discretizer>> {
        Ok(match self {
            BuiltEnv::Tabular(_) => None,
            BuiltEnv::MountainCar(_) => Some(Discretizer::new(vec![64.0, 256.0])?),
            // Sailing states are already integer grids; unit scales keep them.
            BuiltEnv::Sailing(_) => Some(Discretizer::new(vec![1.0, 1.0, 1.0, 1.0])?),
        })
    }

    /// Reward assigned to unseen state-action pairs when fitting models.
    pub fn reward_floor(&self) -> f64 {
        match self {
            BuiltEnv::Tabular(m) => m.reward_range().0,
            BuiltEnv::MountainCar(_) => -1.0,
            BuiltEnv::Sailing(_) => SAILING_R_MIN,
        }
    }

    /// Scale of the step-dependent constant baseline Q.
    pub fn baseline_scale(&self) -> f64 {
        match self {
            BuiltEnv::Sailing(_) => 0.5,
            _ => 1.0,
        }
    }

    /// Range of possible returns, used to crop importance-weighted values.
    pub fn return_range(&self) -> (f64, f64) {
        match self {
            BuiltEnv::Tabular(m) => m.return_range(),
            BuiltEnv::MountainCar(e) => {
                let h = e.horizon() as i32;
                let g = e.gamma();
                (-(1.0 - g.powi(h)) / (1.0 - g), 0.0)
            }
            BuiltEnv::Sailing(e) => {
                let h = e.horizon() as i32;
                let g = e.gamma();
                (SAILING_R_MIN * (1.0 - g.powi(h)) / (1.0 - g), 0.0)
            }
        }
    }

    pub fn crop(&self, cfg: &Config) -> Result<Crop> {
        let (lo, hi) = self.return_range();
        Crop::new(cfg.crop_min.unwrap_or(lo), cfg.crop_max.unwrap_or(hi))
    }

    /// Predicate identifying absorbing terminal states, where every value
    /// estimate must be zero.
    pub fn terminal_predicate(&self) -> Box<dyn Fn(&State) -> bool + Send + Sync> {
        match self {
            BuiltEnv::Tabular(m) => {
                let flags = m.terminal_flags.clone();
                Box::new(move |s: &State| flags[s.expect_index()])
            }
            BuiltEnv::MountainCar(_) => Box::new(|s: &State| {
                s.features().map_or(false, |f| MountainCar::is_terminal(f[0]))
            }),
            BuiltEnv::Sailing(e) => {
                let goal = (e.grid - 1) as f64;
                Box::new(move |s: &State| {
                    s.features().map_or(false, |f| f[0] == goal && f[1] == goal)
                })
            }
        }
    }

    /// Step-dependent constant baseline Q, pinned to zero at terminal
    /// states so that padded post-termination steps contribute no
    /// importance-weighted corrections.
    pub fn baseline_q(&self, gamma: f64, h: usize, n_actions: usize) -> TerminalZeroQ<ConstantQ> {
        TerminalZeroQ::new(
            constant_baseline_q(self.reward_floor(), self.baseline_scale(), gamma, h, n_actions),
            self.terminal_predicate(),
        )
    }
}

/// Builds the environment named by the config. Synthetic-MDP parameters come
/// from the config; their generator seed derives from the master seed.
pub fn build_env(cfg: &Config) -> Result<BuiltEnv> {
    let env_seed = derive_seed(cfg.seed, 0xE);
    Ok(match cfg.env.as_str() {
        "mountain_car" => BuiltEnv::MountainCar(make_mountain_car()),
        "sailing" => BuiltEnv::Sailing(make_sailing(cfg.grid)?),
        "tree" => BuiltEnv::Tabular(make_random_tree_mdp(
            cfg.branch,
            cfg.actions,
            cfg.horizon,
            env_seed,
        )?),
        "dag" => BuiltEnv::Tabular(make_random_dag_mdp(&cfg.layers, cfg.actions, env_seed)?),
        "factored" => {
            BuiltEnv::Tabular(make_factored_sim(cfg.n_vars, cfg.var_arity, cfg.actions, env_seed)?)
        }
        other => {
            return Err(OpeError::InvalidArgument(format!(
                "unknown environment id `{other}` (expected mountain_car, sailing, tree, dag, \
                 or factored)"
            )))
        }
    })
}

/// True value of `pi1`: exact on tabular environments, Monte Carlo otherwise.
pub fn ground_truth(env: &BuiltEnv, pi1: &Policy, rollouts: usize, seed: u64) -> Result<f64> {
    match env.mdp() {
        Some(m) => exact_value(m, pi1, m.horizon),
        None => monte_carlo_value(env.env(), pi1, rollouts, seed).map(|(v, _)| v),
    }
}

/// Fits the evaluation model for a dataset slice with the environment's
/// aggregation and reward floor.
pub fn fit_env_model(env: &BuiltEnv, data: &Dataset) -> Result<FittedModel> {
    fit_tabular_model(
        data,
        env.discretizer()?,
        env.reward_floor(),
        env.env().gamma(),
        env.env().n_actions(),
    )
}

/// One line of the accuracy report.
#[derive(Debug, Clone)]
pub struct RmseRow {
    pub method: Method,
    pub alpha: f64,
    /// |D_test| for the split-based methods; n_eval for the cross-fitted one.
    pub split: usize,
    /// Trajectories averaged by the estimator.
    pub n: usize,
    pub rel_rmse: f64,
    pub bias: f64,
    /// Standard error of the relative RMSE across runs.
    pub stderr: f64,
}

pub const RMSE_HEADER: &str = "method,alpha,split,n,rel_rmse,bias,stderr";

impl RmseRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.method, self.alpha, self.split, self.n, self.rel_rmse, self.bias, self.stderr
        )
    }
}

fn cropped_mean(values: &mut [f64], crop: Crop) -> f64 {
    let mut sum = 0.0;
    for v in values.iter_mut() {
        *v = v.clamp(crop.v_min, crop.v_max);
        sum += *v;
    }
    sum / values.len() as f64
}

/// Per-run estimates for every (method, alpha, split) cell, keyed by the
/// cell's position in the deterministic output order.
struct EstimateStore {
    // [method][alpha][split] -> per-run estimates; the cross-fitted method
    // collapses the split axis to a single slot.
    cells: Vec<Vec<Vec<Vec<f64>>>>,
}

/// Accuracy experiment: repeatedly draw evaluation datasets, split them into
/// regression and test parts per the split grid, and summarize every
/// estimator's error against the ground-truth value of each target policy.
pub fn run_rmse_experiment(cfg: &Config) -> Result<Vec<RmseRow>> {
    if cfg.runs < 2 {
        return Err(OpeError::InvalidArgument(
            "the accuracy experiment needs runs >= 2 to report error bars".into(),
        ));
    }
    let env = build_env(cfg)?;
    let e = env.env();
    let (h, gamma, n_actions) = (e.horizon(), e.gamma(), e.n_actions());
    let crop = env.crop(cfg)?;
    let pi0 = Policy::uniform(n_actions);

    // Candidate-policy training happens once: the trained policy and the
    // ground truths are shared by all runs.
    let d_train = sample_dataset(e, &pi0, cfg.n_train, derive_seed(cfg.seed, 1))?;
    let model_train = fit_env_model(&env, &d_train)?;
    let pi_train = optimal_policy(&model_train, h, false);
    drop(model_train);

    let mut targets: Vec<(f64, Policy, f64)> = Vec::with_capacity(cfg.alphas.len());
    for (ai, &alpha) in cfg.alphas.iter().enumerate() {
        let pi1 = mix_policies(pi_train.clone(), pi0.clone(), alpha)?;
        let truth =
            ground_truth(&env, &pi1, cfg.truth_rollouts, derive_seed(cfg.seed, 100 + ai as u64))?;
        targets.push((alpha, pi1, truth));
    }

    let needs_model = cfg
        .estimators
        .iter()
        .any(|m| matches!(m, Method::Reg | Method::Dr | Method::DrV2));
    let wants_kfold = cfg.estimators.contains(&Method::KfoldDr);
    let baseline = env.baseline_q(gamma, h, n_actions);

    if wants_kfold && cfg.k > cfg.n_eval {
        return Err(OpeError::InvalidArgument(format!(
            "k = {} exceeds the evaluation dataset size {}",
            cfg.k, cfg.n_eval
        )));
    }

    let mut store = EstimateStore {
        cells: vec![
            vec![vec![Vec::with_capacity(cfg.runs); cfg.splits.len().max(1)]; targets.len()];
            cfg.estimators.len()
        ],
    };

    for run in 0..cfg.runs {
        let seed_r = derive_seed(cfg.seed, 1000 + run as u64);
        let d_eval = sample_dataset(e, &pi0, cfg.n_eval, derive_seed(seed_r, 0))?;
        // One seeded shuffle per run; all splits are prefixes of it.
        let mut order: Vec<usize> = (0..cfg.n_eval).collect();
        order.shuffle(&mut ChaCha12Rng::seed_from_u64(derive_seed(seed_r, 1)));
        let shuffled = Dataset::new(
            order.iter().map(|&i| d_eval.trajectories[i].clone()).collect(),
            d_eval.horizon,
            d_eval.meta.clone(),
        )?;
        drop(d_eval);

        for (si, &n_test) in cfg.splits.iter().enumerate() {
            let d_test = shuffled.slice(0..n_test)?;
            let d_reg = shuffled.slice(n_test..cfg.n_eval)?;
            let model_reg = if needs_model { Some(fit_env_model(&env, &d_reg)?) } else { None };
            for (ai, (_, pi1, _)) in targets.iter().enumerate() {
                let model_q: Option<ModelQ> =
                    model_reg.as_ref().map(|m| q_from_model(m, pi1, h));
                let params = EvalParams {
                    pi1,
                    gamma,
                    qhat: model_q.as_ref().map(|q| q as &dyn QFunction),
                    baseline: Some(&baseline),
                    model: model_reg.as_ref(),
                    model_q: model_q.as_ref(),
                    k: cfg.k,
                    fitter: None,
                    horizon: h,
                };
                for (mi, method) in cfg.estimators.iter().enumerate() {
                    if *method == Method::KfoldDr {
                        continue;
                    }
                    let data = if *method == Method::Reg { &d_reg } else { &d_test };
                    let report = evaluate(data, *method, &params, crop)?;
                    store.cells[mi][ai][si].push(report.point_estimate);
                }
            }
        }

        if wants_kfold {
            // Fold models depend only on the data partition, so they are fit
            // once per run and reused across target policies.
            let ranges = fold_ranges(cfg.n_eval, cfg.k);
            let mut fold_models = Vec::with_capacity(ranges.len());
            for range in &ranges {
                let complement: Vec<_> = shuffled
                    .trajectories
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !range.contains(i))
                    .map(|(_, t)| t.clone())
                    .collect();
                let held_out =
                    Dataset::new(complement, shuffled.horizon, shuffled.meta.clone())?;
                fold_models.push(fit_env_model(&env, &held_out)?);
            }
            for (ai, (_, pi1, _)) in targets.iter().enumerate() {
                let mut values = vec![0.0; cfg.n_eval];
                for (range, model) in ranges.iter().zip(&fold_models) {
                    let qhat = q_from_model(model, pi1, h);
                    for i in range.clone() {
                        values[i] = dr(&shuffled.trajectories[i], &qhat, pi1, gamma)?;
                    }
                }
                let point = cropped_mean(&mut values, crop);
                let mi = cfg.estimators.iter().position(|m| *m == Method::KfoldDr).unwrap();
                store.cells[mi][ai][0].push(point);
            }
        }
    }

    let mut rows = Vec::new();
    for (mi, method) in cfg.estimators.iter().enumerate() {
        for (ai, (alpha, _, truth)) in targets.iter().enumerate() {
            let splits: Vec<(usize, usize)> = if *method == Method::KfoldDr {
                vec![(0, cfg.n_eval)]
            } else {
                cfg.splits.iter().enumerate().map(|(si, &s)| (si, s)).collect()
            };
            for (si, split) in splits {
                let estimates = &store.cells[mi][ai][si];
                let report: MseReport =
                    ope_core::estimator_mse(*truth, cfg.runs, |r| Ok(estimates[r]))?;
                let n = match method {
                    Method::Reg => cfg.n_eval - split,
                    Method::KfoldDr => cfg.n_eval,
                    _ => split,
                };
                rows.push(RmseRow {
                    method: *method,
                    alpha: *alpha,
                    split,
                    n,
                    rel_rmse: report.rel_rmse,
                    bias: report.bias,
                    stderr: report.rel_rmse_stderr,
                });
            }
        }
    }
    Ok(rows)
}
