use crate::policy::Policy;
use crate::state::State;

/// Horizon-indexed action-value estimate. `t` runs from 1 to H; `q(t, s, a)`
/// is the estimated value of taking `a` at `s` with H+1-t steps remaining.
///
/// The paired state value is always the pi1-expectation of Q, computed on
/// demand rather than stored.
pub trait QFunction {
    fn q(&self, t: usize, s: &State, a: usize) -> f64;

    fn n_actions(&self) -> usize;

    fn v(&self, t: usize, s: &State, pi1: &Policy) -> f64 {
        (0..self.n_actions())
            .map(|a| {
                let p = pi1.prob(s, a);
                if p > 0.0 {
                    p * self.q(t, s, a)
                } else {
                    0.0
                }
            })
            .sum()
    }
}

/// Dense Q table over tabular states, indexed [t-1][s][a].
#[derive(Debug, Clone)]
pub struct TabularQ {
    table: Vec<Vec<Vec<f64>>>,
    n_actions: usize,
}

impl TabularQ {
    pub fn new(table: Vec<Vec<Vec<f64>>>, n_actions: usize) -> Self {
        Self { table, n_actions }
    }

    pub fn horizon(&self) -> usize {
        self.table.len()
    }

    pub fn table(&self) -> &Vec<Vec<Vec<f64>>> {
        &self.table
    }
}

impl QFunction for TabularQ {
    fn q(&self, t: usize, s: &State, a: usize) -> f64 {
        self.table[t - 1][s.expect_index()][a]
    }

    fn n_actions(&self) -> usize {
        self.n_actions
    }
}

/// The trivial value function Q = 0; DR with this Q reduces to step-wise IS.
#[derive(Debug, Clone)]
pub struct ZeroQ {
    pub n_actions: usize,
}

impl QFunction for ZeroQ {
    fn q(&self, _t: usize, _s: &State, _a: usize) -> f64 {
        0.0
    }

    fn n_actions(&self) -> usize {
        self.n_actions
    }
}

/// Wraps a Q estimate so that terminal (absorbing) states are pinned to
/// value zero. Once an episode has ended, the padded steps that fill the
/// trajectory out to the fixed horizon are worth exactly nothing; a nonzero
/// estimate there turns every padded step into an importance-weighted
/// correction term, which is especially damaging for constant baselines.
pub struct TerminalZeroQ<Q> {
    inner: Q,
    is_terminal: Box<dyn Fn(&State) -> bool + Send + Sync>,
}

impl<Q: QFunction> TerminalZeroQ<Q> {
    pub fn new(inner: Q, is_terminal: Box<dyn Fn(&State) -> bool + Send + Sync>) -> Self {
        Self { inner, is_terminal }
    }
}

impl<Q: QFunction> QFunction for TerminalZeroQ<Q> {
    fn q(&self, t: usize, s: &State, a: usize) -> f64 {
        if (self.is_terminal)(s) {
            0.0
        } else {
            self.inner.q(t, s, a)
        }
    }

    fn n_actions(&self) -> usize {
        self.inner.n_actions()
    }
}

/// State-action independent, horizon-dependent constants.
#[derive(Debug, Clone)]
pub struct ConstantQ {
    per_step: Vec<f64>,
    n_actions: usize,
}

impl ConstantQ {
    pub fn new(per_step: Vec<f64>, n_actions: usize) -> Self {
        Self { per_step, n_actions }
    }
}

impl QFunction for ConstantQ {
    fn q(&self, t: usize, _s: &State, _a: usize) -> f64 {
        self.per_step[t - 1]
    }

    fn n_actions(&self) -> usize {
        self.n_actions
    }
}
