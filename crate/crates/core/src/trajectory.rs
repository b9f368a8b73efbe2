use std::io::{BufRead, BufReader, Read, Write};

use crate::error::{OpeError, Result};
use crate::policy::Policy;
use crate::state::State;

/// One logged step: the state, the action taken, the observed reward, and
/// the behavior policy's probability of that action (the propensity).
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub state: State,
    pub action: usize,
    pub reward: f64,
    pub behavior_prob: f64,
}

/// A logged H-step rollout. Episodes that end early are padded with
/// absorbing zero-reward steps so every trajectory has exactly H steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    pub final_state: State,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn discounted_return(&self, gamma: f64) -> f64 {
        let mut total = 0.0;
        let mut disc = 1.0;
        for step in &self.steps {
            total += disc * step.reward;
            disc *= gamma;
        }
        total
    }

    /// State visited at step t (1-based); t = H+1 is the final state.
    pub fn state_at(&self, t: usize) -> &State {
        if t <= self.steps.len() {
            &self.steps[t - 1].state
        } else {
            &self.final_state
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetMeta {
    pub env_id: String,
    pub seed: u64,
}

/// A batch of mutually independent trajectories sharing the same horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
    pub horizon: usize,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(trajectories: Vec<Trajectory>, horizon: usize, meta: DatasetMeta) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(OpeError::InvalidArgument("empty dataset".into()));
        }
        for (i, traj) in trajectories.iter().enumerate() {
            if traj.horizon() != horizon {
                return Err(OpeError::InvalidArgument(format!(
                    "trajectory {i} has horizon {}, expected {horizon}",
                    traj.horizon()
                )));
            }
            for (t, step) in traj.steps.iter().enumerate() {
                if !(step.behavior_prob > 0.0 && step.behavior_prob <= 1.0) {
                    return Err(OpeError::InvalidArgument(format!(
                        "trajectory {i} step {}: behavior probability {} outside (0,1]",
                        t + 1,
                        step.behavior_prob
                    )));
                }
            }
        }
        Ok(Self { trajectories, horizon, meta })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Sub-dataset over a contiguous index range (metadata carried over).
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Dataset> {
        Dataset::new(self.trajectories[range].to_vec(), self.horizon, self.meta.clone())
    }
}

/// Per-step importance ratios pi1/pi0 accumulated into prefix products
/// rho_{1:t} for t = 1..H.
pub fn cumulative_ratios(traj: &Trajectory, pi1: &Policy) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(traj.steps.len());
    let mut acc = 1.0;
    for (t, step) in traj.steps.iter().enumerate() {
        let target = pi1.prob(&step.state, step.action);
        if step.behavior_prob <= 0.0 {
            if target > 0.0 {
                return Err(OpeError::SupportViolation { step: t + 1, target_prob: target });
            }
            acc = 0.0;
        } else {
            acc *= target / step.behavior_prob;
        }
        out.push(acc);
    }
    Ok(out)
}

fn fmt_state(s: &State) -> String {
    match s {
        State::Index(i) => i.to_string(),
        State::Features(f) => f
            .iter()
            .map(|x| format!("{x:?}"))
            .collect::<Vec<_>>()
            .join(","),
    }
}

fn parse_state(tok: &str, line: usize) -> Result<State> {
    let bad = |msg: String| OpeError::Parse { line, msg };
    if tok.contains(',') || tok.contains('.') {
        let feats = tok
            .split(',')
            .map(|p| p.parse::<f64>().map_err(|e| bad(format!("bad feature {p:?}: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        Ok(State::Features(feats))
    } else {
        Ok(State::Index(
            tok.parse::<usize>().map_err(|e| bad(format!("bad state id {tok:?}: {e}")))?,
        ))
    }
}

/// Write a dataset in the line-oriented text format:
/// header `H=<int> env=<id> seed=<int>`, then per trajectory one line per
/// step `t state action reward behavior_prob`, blank line after each
/// trajectory. Floats use shortest round-trip representation.
pub fn save_dataset(dataset: &Dataset, w: &mut impl Write) -> Result<()> {
    writeln!(
        w,
        "H={} env={} seed={}",
        dataset.horizon, dataset.meta.env_id, dataset.meta.seed
    )?;
    for traj in &dataset.trajectories {
        for (t, step) in traj.steps.iter().enumerate() {
            writeln!(
                w,
                "{} {} {} {:?} {:?}",
                t + 1,
                fmt_state(&step.state),
                step.action,
                step.reward,
                step.behavior_prob
            )?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn load_dataset(r: impl Read) -> Result<Dataset> {
    let reader = BufReader::new(r);
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or(OpeError::Parse { line: 1, msg: "empty file".into() })?;
    let header = header?;
    let mut horizon = None;
    let mut env_id = String::new();
    let mut seed = 0u64;
    for part in header.split_whitespace() {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| OpeError::Parse { line: 1, msg: format!("bad header field {part:?}") })?;
        match k {
            "H" => {
                horizon = Some(v.parse::<usize>().map_err(|e| OpeError::Parse {
                    line: 1,
                    msg: format!("bad horizon {v:?}: {e}"),
                })?)
            }
            "env" => env_id = v.to_string(),
            "seed" => {
                seed = v.parse::<u64>().map_err(|e| OpeError::Parse {
                    line: 1,
                    msg: format!("bad seed {v:?}: {e}"),
                })?
            }
            _ => {
                return Err(OpeError::Parse { line: 1, msg: format!("unknown header key {k:?}") })
            }
        }
    }
    let horizon =
        horizon.ok_or(OpeError::Parse { line: 1, msg: "header missing H=<int>".into() })?;

    let mut trajectories = Vec::new();
    let mut steps: Vec<Step> = Vec::new();
    let mut flush = |steps: &mut Vec<Step>, line: usize| -> Result<()> {
        if steps.is_empty() {
            return Ok(());
        }
        if steps.len() != horizon {
            return Err(OpeError::Parse {
                line,
                msg: format!("trajectory has {} steps, expected H={horizon}", steps.len()),
            });
        }
        let final_state = steps.last().unwrap().state.clone();
        trajectories.push(Trajectory { steps: std::mem::take(steps), final_state });
        Ok(())
    };
    let mut last_line = 1;
    for (idx, line) in lines {
        let lineno = idx + 1;
        last_line = lineno;
        let line = line?;
        if line.trim().is_empty() {
            flush(&mut steps, lineno)?;
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 5 {
            return Err(OpeError::Parse {
                line: lineno,
                msg: format!("expected 5 fields, got {}", toks.len()),
            });
        }
        let t: usize = toks[0].parse().map_err(|e| OpeError::Parse {
            line: lineno,
            msg: format!("bad step index {:?}: {e}", toks[0]),
        })?;
        if t != steps.len() + 1 {
            return Err(OpeError::Parse {
                line: lineno,
                msg: format!("step index {t} out of order, expected {}", steps.len() + 1),
            });
        }
        let state = parse_state(toks[1], lineno)?;
        let action: usize = toks[2].parse().map_err(|e| OpeError::Parse {
            line: lineno,
            msg: format!("bad action {:?}: {e}", toks[2]),
        })?;
        let reward: f64 = toks[3].parse().map_err(|e| OpeError::Parse {
            line: lineno,
            msg: format!("bad reward {:?}: {e}", toks[3]),
        })?;
        let behavior_prob: f64 = toks[4].parse().map_err(|e| OpeError::Parse {
            line: lineno,
            msg: format!("bad behavior probability {:?}: {e}", toks[4]),
        })?;
        steps.push(Step { state, action, reward, behavior_prob });
    }
    flush(&mut steps, last_line)?;
    Dataset::new(trajectories, horizon, DatasetMeta { env_id, seed })
}
