//! Safe policy improvement by lower-confidence-bound candidate selection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use ope_core::numeric::{derive_seed, mean, stderr_of_mean};
use ope_core::{
    confidence_bound, evaluate, is_trajwise_anchored, mix_policies, optimal_policy, q_from_model,
    sample_dataset, BoundSpec, Crop, Dataset, EstimatorReport, EvalParams, Method, OpeError,
    Policy, QFunction, Result,
};

use crate::config::{Config, Objective};
use crate::experiment::{build_env, fit_env_model, ground_truth};

/// One line of the safe-improvement report: the mean true-value improvement
/// of the recommended policy over the behavior policy.
#[derive(Debug, Clone)]
pub struct SafeRow {
    pub selector: Method,
    pub c: f64,
    pub objective: &'static str,
    pub size: usize,
    pub improvement: f64,
    pub improvement_stderr: f64,
    pub behavior_value: f64,
}

pub const SAFE_HEADER: &str =
    "selector,c,objective,size,improvement,improvement_stderr,behavior_value";

impl SafeRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.selector,
            self.c,
            self.objective,
            self.size,
            self.improvement,
            self.improvement_stderr,
            self.behavior_value
        )
    }
}

/// Scores a candidate with floor-anchored trajectory importance sampling:
/// per-trajectory value `v_min + rho * (G - v_min)`, clipped to the crop
/// range. Raw importance sampling scores an unsupported candidate 0 +/- 0,
/// which in an all-negative-return domain sits above every feasible policy
/// value and turns the lower-confidence-bound rule into an automatic
/// accept; anchoring at the return floor keeps the bound pessimistic
/// wherever the data carries no weight while leaving the point estimate
/// unbiased (E[rho] = 1).
fn anchored_is_report(
    data: &Dataset,
    pi1: &Policy,
    gamma: f64,
    crop: Crop,
) -> Result<EstimatorReport> {
    let mut crop_count = 0;
    let mut values = Vec::with_capacity(data.trajectories.len());
    for traj in &data.trajectories {
        let v = is_trajwise_anchored(traj, pi1, gamma, crop.v_min)?;
        let clipped = v.clamp(crop.v_min, crop.v_max);
        if clipped != v {
            crop_count += 1;
        }
        values.push(clipped);
    }
    Ok(EstimatorReport {
        method: Method::Is,
        point_estimate: mean(&values),
        stderr: stderr_of_mean(&values),
        n: values.len(),
        per_trajectory_values: values,
        crop_count,
        zero_weight_steps: 0,
    })
}

/// Runs the candidate-generation and selection protocol: for every data size
/// and run, candidates come from models fit on growing training prefixes
/// mixed back towards the behavior policy; each selector scores candidates
/// by `point - c * stderr` on the held-out data and recommends the best one,
/// falling back to the behavior policy when no bound beats its value.
pub fn run_safe_improvement(cfg: &Config) -> Result<Vec<SafeRow>> {
    if cfg.runs < 1 {
        return Err(OpeError::InvalidArgument("safe improvement needs runs >= 1".into()));
    }
    for m in &cfg.selectors {
        if matches!(m, Method::Reg | Method::KfoldDr) {
            return Err(OpeError::InvalidArgument(format!(
                "selector `{m}` does not produce per-trajectory averages with a standard error"
            )));
        }
    }
    let env = build_env(cfg)?;
    let e = env.env();
    let (h, gamma, n_actions) = (e.horizon(), e.gamma(), e.n_actions());
    let crop = env.crop(cfg)?;
    let minimize = cfg.objective == Objective::Minimize;
    let objective_name = match cfg.objective {
        Objective::Maximize => "maximize",
        Objective::Minimize => "minimize",
    };
    let pi0 = Policy::uniform(n_actions);
    let baseline = env.baseline_q(gamma, h, n_actions);
    let v0_true = ground_truth(&env, &pi0, cfg.truth_rollouts, derive_seed(cfg.seed, 3))?;

    let mut rows = Vec::new();
    for &size in &cfg.data_sizes {
        if size < 4 {
            return Err(OpeError::InvalidArgument(format!("data size {size} is too small")));
        }
        // improvements[selector][run]
        let mut improvements = vec![Vec::with_capacity(cfg.runs); cfg.selectors.len()];
        for run in 0..cfg.runs {
            let seed_r = derive_seed(derive_seed(cfg.seed, 2000 + size as u64), run as u64);
            let data = sample_dataset(e, &pi0, size, derive_seed(seed_r, 0))?;
            let mut order: Vec<usize> = (0..size).collect();
            order.shuffle(&mut ChaCha12Rng::seed_from_u64(derive_seed(seed_r, 1)));
            let shuffled = Dataset::new(
                order.iter().map(|&i| data.trajectories[i].clone()).collect(),
                data.horizon,
                data.meta.clone(),
            )?;
            // On-policy estimate of the behavior policy's value from the
            // whole dataset: the yardstick every candidate bound must beat.
            let returns: Vec<f64> =
                shuffled.trajectories.iter().map(|t| t.discounted_return(gamma)).collect();
            let v0_hat = mean(&returns);

            // best[selector] = (lcb, candidate policy)
            let mut best: Vec<Option<(f64, Policy)>> = vec![None; cfg.selectors.len()];
            for &fraction in &cfg.train_fractions {
                let n_tr = ((size as f64 * fraction).round() as usize).clamp(1, size - 2);
                let d_train = shuffled.slice(0..n_tr)?;
                let d_rest = shuffled.slice(n_tr..size)?;
                let model = fit_env_model(&env, &d_train)?;
                let pi_train = optimal_policy(&model, h, minimize);
                for &alpha in &cfg.safe_alphas {
                    let candidate = mix_policies(pi_train.clone(), pi0.clone(), alpha)?;
                    let needs_q =
                        cfg.selectors.iter().any(|m| matches!(m, Method::Dr | Method::DrBsl | Method::DrV2));
                    let model_q =
                        if needs_q { Some(q_from_model(&model, &candidate, h)) } else { None };
                    for (si, selector) in cfg.selectors.iter().enumerate() {
                        let params = EvalParams {
                            pi1: &candidate,
                            gamma,
                            qhat: model_q.as_ref().map(|q| q as &dyn QFunction),
                            baseline: Some(&baseline),
                            model: Some(&model),
                            model_q: model_q.as_ref(),
                            k: cfg.k,
                            fitter: None,
                            horizon: h,
                        };
                        let report = if *selector == Method::Is {
                            anchored_is_report(&d_rest, &candidate, gamma, crop)?
                        } else {
                            evaluate(&d_rest, *selector, &params, crop)?
                        };
                        let lcb =
                            confidence_bound(&report, BoundSpec::Normal { c: cfg.c })?.lower;
                        if best[si].as_ref().map_or(true, |(b, _)| lcb > *b) {
                            best[si] = Some((lcb, candidate.clone()));
                        }
                    }
                }
            }

            for (si, choice) in best.iter().enumerate() {
                let improvement = match choice {
                    Some((lcb, pi)) if *lcb > v0_hat => {
                        let v = ground_truth(
                            &env,
                            pi,
                            cfg.truth_rollouts,
                            derive_seed(seed_r, 10 + si as u64),
                        )?;
                        v - v0_true
                    }
                    // No bound beats the behavior policy: keep it (no change).
                    _ => 0.0,
                };
                improvements[si].push(improvement);
            }
        }

        for (si, selector) in cfg.selectors.iter().enumerate() {
            rows.push(SafeRow {
                selector: *selector,
                c: cfg.c,
                objective: objective_name,
                size,
                improvement: mean(&improvements[si]),
                improvement_stderr: stderr_of_mean(&improvements[si]),
                behavior_value: v0_true,
            });
        }
    }
    Ok(rows)
}
