//! Off-policy value estimators and confidence intervals.

use std::fmt;
use std::str::FromStr;

use crate::error::{OpeError, Result};
use crate::model::{q_from_model, FittedModel, ModelQ};
use crate::numeric::{mean, pairwise_sum, stderr_of_mean};
use crate::policy::Policy;
use crate::qfunction::QFunction;
use crate::trajectory::{cumulative_ratios, Dataset, Trajectory};

/// Estimator identifiers accepted everywhere a method is named.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Is,
    StepIs,
    Wis,
    StepWis,
    Reg,
    Dr,
    DrBsl,
    DrV2,
    KfoldDr,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Is,
        Method::StepIs,
        Method::Wis,
        Method::StepWis,
        Method::Reg,
        Method::Dr,
        Method::DrBsl,
        Method::DrV2,
        Method::KfoldDr,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            Method::Is => "is",
            Method::StepIs => "step_is",
            Method::Wis => "wis",
            Method::StepWis => "step_wis",
            Method::Reg => "reg",
            Method::Dr => "dr",
            Method::DrBsl => "dr_bsl",
            Method::DrV2 => "dr_v2",
            Method::KfoldDr => "kfold_dr",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Method {
    type Err = OpeError;

    fn from_str(s: &str) -> Result<Method> {
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.id() == s)
            .ok_or_else(|| OpeError::InvalidArgument(format!("unknown estimator id `{s}`")))
    }
}

/// One estimator's output on one dataset.
#[derive(Debug, Clone)]
pub struct EstimatorReport {
    pub method: Method,
    pub point_estimate: f64,
    pub stderr: f64,
    pub n: usize,
    /// Pre-average values; for WIS these are the normalized per-trajectory
    /// contributions, recorded for diagnostics only.
    pub per_trajectory_values: Vec<f64>,
    pub crop_count: usize,
    /// Horizons whose normalizing weight was zero (WIS only).
    pub zero_weight_steps: usize,
}

impl EstimatorReport {
    fn from_values(method: Method, values: Vec<f64>, crop_count: usize) -> Self {
        EstimatorReport {
            method,
            point_estimate: mean(&values),
            stderr: stderr_of_mean(&values),
            n: values.len(),
            per_trajectory_values: values,
            crop_count,
            zero_weight_steps: 0,
        }
    }

    /// CSV row in the report schema `method,n,point,stderr,crop_count`.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.method, self.n, self.point_estimate, self.stderr, self.crop_count
        )
    }
}

/// Full-trajectory importance sampling: cumulative ratio times the
/// discounted return.
pub fn is_trajwise(traj: &Trajectory, pi1: &Policy, gamma: f64) -> Result<f64> {
    let ratios = cumulative_ratios(traj, pi1)?;
    Ok(ratios[traj.horizon() - 1] * traj.discounted_return(gamma))
}

/// Full-trajectory importance sampling anchored at a return floor:
/// `v_min + rho_{1:H} * (G - v_min)`. Since E[rho_{1:H}] = 1 this is
/// unbiased for the same target value, but a trajectory carrying no
/// importance weight contributes the floor `v_min` instead of 0, so the
/// average degrades pessimistically (to the bottom of the value range)
/// rather than optimistically when the target policy has little or no
/// support in the data. This matters for lower-confidence-bound selection
/// in all-negative-return domains, where a raw importance-sampling score of
/// 0 +/- 0 would sit above every feasible policy value.
pub fn is_trajwise_anchored(
    traj: &Trajectory,
    pi1: &Policy,
    gamma: f64,
    v_min: f64,
) -> Result<f64> {
    let ratios = cumulative_ratios(traj, pi1)?;
    Ok(v_min + ratios[traj.horizon() - 1] * (traj.discounted_return(gamma) - v_min))
}

/// Step-wise importance sampling, closed form: sum of gamma^(t-1) *
/// rho_{1:t} * r_t.
pub fn is_stepwise(traj: &Trajectory, pi1: &Policy, gamma: f64) -> Result<f64> {
    let ratios = cumulative_ratios(traj, pi1)?;
    let terms: Vec<f64> = traj
        .steps
        .iter()
        .enumerate()
        .map(|(i, step)| gamma.powi(i as i32) * ratios[i] * step.reward)
        .collect();
    Ok(pairwise_sum(&terms))
}

/// Step-wise importance sampling in its backward-recursive form
/// V <- rho_t (r_t + gamma V); agrees with `is_stepwise` to rounding.
pub fn is_stepwise_recursive(traj: &Trajectory, pi1: &Policy, gamma: f64) -> Result<f64> {
    let mut v = 0.0;
    for (i, step) in traj.steps.iter().enumerate().rev() {
        let target = pi1.prob(&step.state, step.action);
        if step.behavior_prob <= 0.0 && target > 0.0 {
            return Err(OpeError::SupportViolation { step: i + 1, target_prob: target });
        }
        let rho = target / step.behavior_prob;
        v = rho * (step.reward + gamma * v);
    }
    Ok(v)
}

/// Doubly robust backward recursion
/// V <- Vhat(s_t) + rho_t (r_t + gamma V - Qhat(s_t, a_t)).
pub fn dr(traj: &Trajectory, qhat: &dyn QFunction, pi1: &Policy, gamma: f64) -> Result<f64> {
    let mut v = 0.0;
    for (i, step) in traj.steps.iter().enumerate().rev() {
        let t = i + 1;
        let target = pi1.prob(&step.state, step.action);
        if step.behavior_prob <= 0.0 && target > 0.0 {
            return Err(OpeError::SupportViolation { step: t, target_prob: target });
        }
        let rho = target / step.behavior_prob;
        let vhat = qhat.v(t, &step.state, pi1);
        let correction = step.reward + gamma * v - qhat.q(t, &step.state, step.action);
        v = vhat + rho * correction;
    }
    Ok(v)
}

/// Variance-reduced variant of the doubly robust recursion that replaces
/// Qhat(s_t, a_t) with Rhat(s_t, a_t) + gamma Vhat(s_{t+1}), treating the
/// model's transition probabilities as exact. The terminal Vhat(s_{H+1})
/// is 0 by the absorbing convention.
pub fn dr_v2(
    traj: &Trajectory,
    model: &FittedModel,
    qhat: &ModelQ,
    pi1: &Policy,
    gamma: f64,
) -> Result<f64> {
    let h = traj.horizon();
    let mut v = 0.0;
    for (i, step) in traj.steps.iter().enumerate().rev() {
        let t = i + 1;
        let target = pi1.prob(&step.state, step.action);
        if step.behavior_prob <= 0.0 && target > 0.0 {
            return Err(OpeError::SupportViolation { step: t, target_prob: target });
        }
        let rho = target / step.behavior_prob;
        let vhat = qhat.v(t, &step.state, pi1);
        let vhat_next = if t == h { 0.0 } else { qhat.v(t + 1, traj.state_at(t + 1), pi1) };
        let rhat = model.reward(&step.state, step.action);
        v = vhat + rho * (step.reward + gamma * v - rhat - gamma * vhat_next);
    }
    Ok(v)
}

/// Weighted importance sampling. Normalizing weights couple the whole
/// dataset, so this is inherently a dataset-level estimator; the report's
/// per-trajectory values hold the normalized contributions.
pub fn wis(dataset: &Dataset, pi1: &Policy, gamma: f64, stepwise: bool) -> Result<EstimatorReport> {
    let h = dataset.horizon;
    let n = dataset.len();
    let all_ratios: Vec<Vec<f64>> = dataset
        .trajectories
        .iter()
        .map(|traj| cumulative_ratios(traj, pi1))
        .collect::<Result<_>>()?;
    let weights: Vec<f64> = (0..h)
        .map(|t| {
            let col: Vec<f64> = all_ratios.iter().map(|r| r[t]).collect();
            pairwise_sum(&col) / n as f64
        })
        .collect();
    let zero_weight_steps = if stepwise {
        weights.iter().filter(|&&w| w == 0.0).count()
    } else {
        usize::from(weights[h - 1] == 0.0)
    };

    let values: Vec<f64> = dataset
        .trajectories
        .iter()
        .zip(&all_ratios)
        .map(|(traj, ratios)| {
            if stepwise {
                let terms: Vec<f64> = traj
                    .steps
                    .iter()
                    .enumerate()
                    .map(|(i, step)| {
                        if weights[i] == 0.0 {
                            0.0
                        } else {
                            gamma.powi(i as i32) * (ratios[i] / weights[i]) * step.reward
                        }
                    })
                    .collect();
                pairwise_sum(&terms)
            } else if weights[h - 1] == 0.0 {
                0.0
            } else {
                (ratios[h - 1] / weights[h - 1]) * traj.discounted_return(gamma)
            }
        })
        .collect();
    let method = if stepwise { Method::StepWis } else { Method::Wis };
    let mut report = EstimatorReport::from_values(method, values, 0);
    report.zero_weight_steps = zero_weight_steps;
    Ok(report)
}

/// Pure model-based estimate: the model value of the target policy,
/// averaged over the dataset's observed initial states.
pub fn reg_estimate(
    model: &FittedModel,
    pi1: &Policy,
    horizon: usize,
    dataset_for_init: &Dataset,
) -> Result<EstimatorReport> {
    let qhat = q_from_model(model, pi1, horizon);
    let values: Vec<f64> = dataset_for_init
        .trajectories
        .iter()
        .map(|traj| qhat.v(1, &traj.steps[0].state, pi1))
        .collect();
    Ok(EstimatorReport::from_values(Method::Reg, values, 0))
}

/// Fits a Q estimate from a held-out dataset, for k-fold evaluation.
pub type Fitter<'a> = dyn Fn(&Dataset) -> Result<Box<dyn QFunction>> + Sync + 'a;

/// Contiguous k-fold split of `0..n`; the remainder goes to earlier folds.
pub fn fold_ranges(n: usize, k: usize) -> Vec<std::ops::Range<usize>> {
    let base = n / k;
    let extra = n % k;
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        out.push(start..start + len);
        start += len;
    }
    out
}

/// k-fold doubly robust estimation: Qhat for each fold is fit on the
/// complement, the DR recursion is applied inside the fold, and every
/// trajectory's value enters the final average.
pub fn kfold_dr(
    dataset: &Dataset,
    k: usize,
    fitter: &Fitter,
    pi1: &Policy,
    gamma: f64,
) -> Result<EstimatorReport> {
    if k < 2 || k > dataset.len() {
        return Err(OpeError::InvalidArgument(format!(
            "k-fold needs 2 <= k <= |dataset|, got k={k} with {} trajectories",
            dataset.len()
        )));
    }
    let mut values = vec![0.0; dataset.len()];
    for range in fold_ranges(dataset.len(), k) {
        let complement: Vec<Trajectory> = dataset
            .trajectories
            .iter()
            .enumerate()
            .filter(|(i, _)| !range.contains(i))
            .map(|(_, t)| t.clone())
            .collect();
        let held_out = Dataset::new(complement, dataset.horizon, dataset.meta.clone())?;
        let qhat = fitter(&held_out)?;
        for i in range {
            values[i] = dr(&dataset.trajectories[i], qhat.as_ref(), pi1, gamma)?;
        }
    }
    Ok(EstimatorReport::from_values(Method::KfoldDr, values, 0))
}

/// Value range used to clip per-trajectory estimates.
#[derive(Debug, Clone, Copy)]
pub struct Crop {
    pub v_min: f64,
    pub v_max: f64,
}

impl Crop {
    pub fn new(v_min: f64, v_max: f64) -> Result<Crop> {
        if !v_min.is_finite() || !v_max.is_finite() || v_min > v_max {
            return Err(OpeError::InvalidArgument(format!(
                "crop bounds must be finite with v_min <= v_max, got [{v_min}, {v_max}]"
            )));
        }
        Ok(Crop { v_min, v_max })
    }

    fn apply(&self, values: &mut [f64]) -> usize {
        let mut count = 0;
        for v in values {
            let clipped = v.clamp(self.v_min, self.v_max);
            if clipped != *v {
                count += 1;
            }
            *v = clipped;
        }
        count
    }
}

/// Everything a method might need at evaluation time. Unused fields may be
/// left empty; a method missing its inputs is an argument error.
pub struct EvalParams<'a> {
    pub pi1: &'a Policy,
    pub gamma: f64,
    /// Qhat for `dr`; step-dependent constant for `dr_bsl`.
    pub qhat: Option<&'a dyn QFunction>,
    pub baseline: Option<&'a dyn QFunction>,
    /// Fitted model for `reg` and `dr_v2`.
    pub model: Option<&'a FittedModel>,
    /// Model Q under pi1, for `dr_v2`; derived from `model` if absent.
    pub model_q: Option<&'a ModelQ>,
    pub k: usize,
    pub fitter: Option<&'a Fitter<'a>>,
    pub horizon: usize,
}

fn require<'a, T: ?Sized>(opt: Option<&'a T>, what: &str, method: Method) -> Result<&'a T> {
    opt.ok_or_else(|| OpeError::InvalidArgument(format!("{method} needs {what}")))
}

/// Evaluate one method on a dataset, cropping per-trajectory values of the
/// importance-sampling family to the given range. The pure model estimate
/// is already bounded and is reported uncropped.
pub fn evaluate(
    dataset: &Dataset,
    method: Method,
    params: &EvalParams,
    crop: Crop,
) -> Result<EstimatorReport> {
    let per_traj = |f: &dyn Fn(&Trajectory) -> Result<f64>| -> Result<Vec<f64>> {
        dataset.trajectories.iter().map(|t| f(t)).collect()
    };
    let pi1 = params.pi1;
    let gamma = params.gamma;
    let mut report = match method {
        Method::Is => EstimatorReport::from_values(
            method,
            per_traj(&|t| is_trajwise(t, pi1, gamma))?,
            0,
        ),
        Method::StepIs => EstimatorReport::from_values(
            method,
            per_traj(&|t| is_stepwise(t, pi1, gamma))?,
            0,
        ),
        Method::Wis => wis(dataset, pi1, gamma, false)?,
        Method::StepWis => wis(dataset, pi1, gamma, true)?,
        Method::Reg => {
            let model = require(params.model, "a fitted model", method)?;
            return reg_estimate(model, pi1, params.horizon, dataset);
        }
        Method::Dr => {
            let qhat = require(params.qhat, "a Q estimate", method)?;
            EstimatorReport::from_values(method, per_traj(&|t| dr(t, qhat, pi1, gamma))?, 0)
        }
        Method::DrBsl => {
            let qhat = require(params.baseline, "a baseline Q", method)?;
            let mut r =
                EstimatorReport::from_values(method, per_traj(&|t| dr(t, qhat, pi1, gamma))?, 0);
            r.method = Method::DrBsl;
            r
        }
        Method::DrV2 => {
            let model = require(params.model, "a fitted model", method)?;
            let owned;
            let qhat = match params.model_q {
                Some(q) => q,
                None => {
                    owned = q_from_model(model, pi1, params.horizon);
                    &owned
                }
            };
            EstimatorReport::from_values(
                method,
                per_traj(&|t| dr_v2(t, model, qhat, pi1, gamma))?,
                0,
            )
        }
        Method::KfoldDr => {
            let fitter = require(params.fitter, "a fold fitter", method)?;
            kfold_dr(dataset, params.k, fitter, pi1, gamma)?
        }
    };
    report.crop_count = crop.apply(&mut report.per_trajectory_values);
    report.point_estimate = mean(&report.per_trajectory_values);
    report.stderr = stderr_of_mean(&report.per_trajectory_values);
    Ok(report)
}

/// Interval construction for a report's point estimate.
#[derive(Debug, Clone, Copy)]
pub enum BoundSpec {
    /// Range-based concentration: half-width b * sqrt(log(2/delta) / (2n)).
    Hoeffding { b: f64, delta: f64 },
    /// Normal approximation: half-width C * stderr.
    Normal { c: f64 },
}

#[derive(Debug, Clone)]
pub struct CIResult {
    pub lower: f64,
    pub upper: f64,
    pub method: &'static str,
    pub parameter: f64,
}

pub fn confidence_bound(report: &EstimatorReport, spec: BoundSpec) -> Result<CIResult> {
    let (half, method, parameter) = match spec {
        BoundSpec::Hoeffding { b, delta } => {
            if b < 0.0 || delta <= 0.0 || delta >= 2.0 {
                return Err(OpeError::InvalidArgument(format!(
                    "hoeffding bound needs b >= 0 and delta in (0, 2), got b={b} delta={delta}"
                )));
            }
            let half = b * ((2.0 / delta).ln() / (2.0 * report.n as f64)).sqrt();
            (half, "hoeffding", delta)
        }
        BoundSpec::Normal { c } => {
            if c < 0.0 {
                return Err(OpeError::InvalidArgument(format!(
                    "normal bound needs C >= 0, got {c}"
                )));
            }
            if report.n < 2 {
                return Err(OpeError::InvalidArgument(
                    "normal bound needs n >= 2 for a standard error".into(),
                ));
            }
            (c * report.stderr, "normal", c)
        }
    };
    Ok(CIResult {
        lower: report.point_estimate - half,
        upper: report.point_estimate + half,
        method,
        parameter,
    })
}
