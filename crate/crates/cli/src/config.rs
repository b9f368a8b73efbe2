//! Experiment configuration: plain `key = value` files with CLI overrides.

use std::str::FromStr;

use ope_core::{Method, OpeError, Result};

/// Objective used when computing candidate policies for safe improvement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Maximize,
    Minimize,
}

impl FromStr for Objective {
    type Err = OpeError;

    fn from_str(s: &str) -> Result<Objective> {
        match s {
            "maximize" => Ok(Objective::Maximize),
            "minimize" => Ok(Objective::Minimize),
            other => Err(OpeError::InvalidArgument(format!(
                "objective must be `maximize` or `minimize`, got `{other}`"
            ))),
        }
    }
}

/// All knobs of the benchmark driver. Defaults reproduce the Mountain Car
/// evaluation protocol; config files and CLI flags override individual keys.
#[derive(Debug, Clone)]
pub struct Config {
    /// `mountain_car`, `sailing`, `tree`, `dag`, or `factored`.
    pub env: String,
    pub n_train: usize,
    pub n_eval: usize,
    /// Mixture rates between the trained policy and the behavior policy.
    pub alphas: Vec<f64>,
    /// |D_test| grid; the rest of each evaluation dataset goes to regression.
    pub splits: Vec<usize>,
    pub estimators: Vec<Method>,
    pub runs: usize,
    pub seed: u64,
    /// Folds for the cross-fitted doubly robust estimator.
    pub k: usize,
    /// Override of the environment-derived crop range.
    pub crop_min: Option<f64>,
    pub crop_max: Option<f64>,
    /// Rollouts for Monte Carlo ground truth on continuous environments.
    pub truth_rollouts: usize,

    // Safe-improvement protocol.
    pub data_sizes: Vec<usize>,
    pub train_fractions: Vec<f64>,
    pub safe_alphas: Vec<f64>,
    /// Confidence scale of the lower bound `point - c * stderr`.
    pub c: f64,
    pub selectors: Vec<Method>,
    pub objective: Objective,

    // Environment parameters.
    pub grid: usize,
    pub branch: usize,
    pub horizon: usize,
    pub actions: usize,
    pub layers: Vec<usize>,
    pub n_vars: usize,
    pub var_arity: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            env: "mountain_car".into(),
            n_train: 2000,
            n_eval: 5000,
            alphas: vec![0.0, 0.25, 0.5, 0.75],
            splits: Vec::new(), // derived from n_eval when left empty
            estimators: vec![
                Method::Is,
                Method::StepIs,
                Method::Wis,
                Method::StepWis,
                Method::Reg,
                Method::Dr,
                Method::DrBsl,
                Method::KfoldDr,
            ],
            runs: 20,
            seed: 0,
            k: 2,
            crop_min: None,
            crop_max: None,
            truth_rollouts: 100_000,
            data_sizes: vec![5000],
            train_fractions: vec![0.2, 0.4, 0.6, 0.8],
            safe_alphas: (0..10).map(|i| i as f64 / 10.0).collect(),
            c: 1.645,
            selectors: vec![Method::Is, Method::Dr],
            objective: Objective::Maximize,
            grid: 10,
            branch: 2,
            horizon: 3,
            actions: 2,
            layers: vec![3, 3, 2],
            n_vars: 5,
            var_arity: 4,
        }
    }
}

fn parse_list<T: FromStr>(value: &str, key: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>().map_err(|_| {
                OpeError::InvalidArgument(format!("bad element `{s}` in list for key `{key}`"))
            })
        })
        .collect()
}

fn parse_scalar<T: FromStr>(value: &str, key: &str) -> Result<T> {
    value.trim().parse::<T>().map_err(|_| {
        OpeError::InvalidArgument(format!("bad value `{value}` for key `{key}`"))
    })
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped;
/// anything else without an `=` is an error naming the line.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(OpeError::Parse {
                line: i + 1,
                msg: format!("expected `key = value`, got `{line}`"),
            });
        };
        out.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}

impl Config {
    /// Applies one key. Unknown keys are validation errors so that config
    /// typos fail loudly.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "env" => self.env = value.to_string(),
            "n_train" => self.n_train = parse_scalar(value, key)?,
            "n_eval" => self.n_eval = parse_scalar(value, key)?,
            "alphas" | "alpha" => self.alphas = parse_list(value, key)?,
            "splits" => self.splits = parse_list(value, key)?,
            "estimators" => self.estimators = parse_list(value, key)?,
            "runs" => self.runs = parse_scalar(value, key)?,
            "seed" => self.seed = parse_scalar(value, key)?,
            "k" => self.k = parse_scalar(value, key)?,
            "crop_min" => self.crop_min = Some(parse_scalar(value, key)?),
            "crop_max" => self.crop_max = Some(parse_scalar(value, key)?),
            "truth_rollouts" => self.truth_rollouts = parse_scalar(value, key)?,
            "data_sizes" => self.data_sizes = parse_list(value, key)?,
            "train_fractions" => self.train_fractions = parse_list(value, key)?,
            "safe_alphas" => self.safe_alphas = parse_list(value, key)?,
            "c" => self.c = parse_scalar(value, key)?,
            "selectors" => self.selectors = parse_list(value, key)?,
            "objective" => self.objective = parse_scalar(value, key)?,
            "grid" => self.grid = parse_scalar(value, key)?,
            "branch" => self.branch = parse_scalar(value, key)?,
            "horizon" => self.horizon = parse_scalar(value, key)?,
            "actions" => self.actions = parse_scalar(value, key)?,
            "layers" => self.layers = parse_list(value, key)?,
            "n_vars" => self.n_vars = parse_scalar(value, key)?,
            "var_arity" => self.var_arity = parse_scalar(value, key)?,
            other => {
                return Err(OpeError::InvalidArgument(format!("unknown config key `{other}`")))
            }
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (key, value) in parse_key_values(text)? {
            self.set(&key, &value)?;
        }
        Ok(())
    }

    /// Fills in the split grid (when left empty) and checks invariants that
    /// do not need the environment.
    pub fn finalize(&mut self) -> Result<()> {
        if self.runs == 0 {
            return Err(OpeError::InvalidArgument("runs must be >= 1".into()));
        }
        if self.estimators.is_empty() {
            return Err(OpeError::InvalidArgument("estimator list is empty".into()));
        }
        if self.alphas.is_empty()
            || self.alphas.iter().any(|&a| !(0.0..=1.0).contains(&a))
        {
            return Err(OpeError::InvalidArgument(
                "alphas must be a non-empty list inside [0, 1]".into(),
            ));
        }
        if self.n_eval < 4 {
            return Err(OpeError::InvalidArgument("n_eval must be at least 4".into()));
        }
        if self.n_train == 0 {
            return Err(OpeError::InvalidArgument("n_train must be >= 1".into()));
        }
        if self.splits.is_empty() {
            self.splits = default_splits(self.n_eval);
        }
        for &s in &self.splits {
            if s < 2 || s > self.n_eval - 2 {
                return Err(OpeError::InvalidArgument(format!(
                    "split {s} outside the valid range [2, {}]",
                    self.n_eval - 2
                )));
            }
        }
        if self.k < 2 {
            return Err(OpeError::InvalidArgument("k must be >= 2 for cross-fitting".into()));
        }
        if self.truth_rollouts < 2 {
            return Err(OpeError::InvalidArgument("truth_rollouts must be >= 2".into()));
        }
        if self.data_sizes.is_empty()
            || self.train_fractions.is_empty()
            || self.safe_alphas.is_empty()
            || self.selectors.is_empty()
        {
            return Err(OpeError::InvalidArgument(
                "safe-improvement grids (data_sizes, train_fractions, safe_alphas, selectors) \
                 must be non-empty"
                    .into(),
            ));
        }
        if self
            .train_fractions
            .iter()
            .any(|&f| !(f > 0.0 && f < 1.0))
        {
            return Err(OpeError::InvalidArgument(
                "train_fractions must lie strictly inside (0, 1)".into(),
            ));
        }
        if self.safe_alphas.iter().any(|&a| !(0.0..=1.0).contains(&a)) {
            return Err(OpeError::InvalidArgument("safe_alphas must lie in [0, 1]".into()));
        }
        if self.c < 0.0 {
            return Err(OpeError::InvalidArgument("c must be >= 0".into()));
        }
        if let (Some(lo), Some(hi)) = (self.crop_min, self.crop_max) {
            if lo > hi {
                return Err(OpeError::InvalidArgument(format!(
                    "crop_min {lo} exceeds crop_max {hi}"
                )));
            }
        }
        Ok(())
    }
}

/// Default |D_test| grid: a sweep from tiny to almost-all of the evaluation
/// data, mirroring the benchmark's shape at any n_eval.
pub fn default_splits(n_eval: usize) -> Vec<usize> {
    let fractions = [0.002, 0.02, 0.2, 0.4, 0.6, 0.8, 0.98, 0.998];
    let mut out: Vec<usize> = fractions
        .iter()
        .map(|f| ((n_eval as f64 * f).round() as usize).clamp(2, n_eval - 2))
        .collect();
    out.dedup();
    out
}
