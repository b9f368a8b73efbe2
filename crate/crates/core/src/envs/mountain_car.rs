use rand::{Rng, RngCore};

use crate::sampling::Environment;
use crate::state::State;

pub const POSITION_MIN: f64 = -1.2;
pub const POSITION_MAX: f64 = 0.6;
pub const VELOCITY_MAX: f64 = 0.07;

/// Mountain Car with accelerated dynamics: one macro-step applies the
/// standard transition four times with the action held fixed. Reward is -1
/// per macro-step until the cart reaches the right boundary, after which
/// the state absorbs with zero reward. Initial states are uniform over the
/// full position-velocity box.
#[derive(Debug, Clone)]
pub struct MountainCar {
    pub horizon: usize,
    pub gamma: f64,
    pub micro_steps: usize,
}

pub fn make_mountain_car() -> MountainCar {
    MountainCar { horizon: 100, gamma: 0.99, micro_steps: 4 }
}

impl MountainCar {
    /// One application of the standard dynamics. Velocity resets to zero at
    /// the left wall.
    pub fn micro_step(position: f64, velocity: f64, action: usize) -> (f64, f64) {
        let force = action as f64 - 1.0;
        let mut v = velocity + 0.001 * force - 0.0025 * (3.0 * position).cos();
        v = v.clamp(-VELOCITY_MAX, VELOCITY_MAX);
        let mut p = position + v;
        if p <= POSITION_MIN {
            p = POSITION_MIN;
            v = 0.0;
        }
        p = p.min(POSITION_MAX);
        (p, v)
    }

    pub fn is_terminal(position: f64) -> bool {
        position >= POSITION_MAX
    }
}

impl Environment for MountainCar {
    fn id(&self) -> String {
        "mountain_car".into()
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn n_actions(&self) -> usize {
        3
    }

    fn sample_initial(&self, rng: &mut dyn RngCore) -> State {
        let p = rng.gen_range(POSITION_MIN..POSITION_MAX);
        let v = rng.gen_range(-VELOCITY_MAX..VELOCITY_MAX);
        State::Features(vec![p, v])
    }

    fn step(&self, s: &State, a: usize, _rng: &mut dyn RngCore) -> (State, f64, bool) {
        let f = s.features().expect("mountain car state is a feature vector");
        let (mut p, mut v) = (f[0], f[1]);
        if Self::is_terminal(p) {
            return (s.clone(), 0.0, true);
        }
        for _ in 0..self.micro_steps {
            let (np, nv) = Self::micro_step(p, v, a);
            p = np;
            v = nv;
            if Self::is_terminal(p) {
                break;
            }
        }
        (State::Features(vec![p, v]), -1.0, Self::is_terminal(p))
    }
}
