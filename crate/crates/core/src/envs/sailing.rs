use rand::RngCore;

use crate::error::{OpeError, Result};
use crate::sampling::{sample_categorical, Environment};
use crate::state::State;

pub const SAILING_R_MIN: f64 = -3.0 - 4.0 * std::f64::consts::SQRT_2;

/// Direction index deltas for the 8 compass directions, 45 degrees apart.
const DX: [i64; 8] = [0, 1, 1, 1, 0, -1, -1, -1];
const DY: [i64; 8] = [1, 1, 0, -1, -1, -1, 0, 1];

/// Stochastic shortest-path sailing domain on a square grid. The state is
/// (x, y, boat direction, wind direction); the 8 actions are moves in the
/// compass directions. Moving against the wind or off the grid is
/// prohibited: the boat stays put and incurs the worst-case cost. Rewards
/// lie in [-3-4*sqrt(2), 0]; the top-right corner absorbs with reward 0.
#[derive(Debug, Clone)]
pub struct Sailing {
    pub grid: usize,
    pub horizon: usize,
    pub gamma: f64,
    /// Probability the wind keeps its direction; the remainder is split
    /// evenly between rotating 45 degrees either way.
    pub wind_persist: f64,
}

pub fn make_sailing(grid: usize) -> Result<Sailing> {
    if grid < 2 {
        return Err(OpeError::InvalidArgument(format!("sailing grid {grid} < 2")));
    }
    Ok(Sailing { grid, horizon: 50, gamma: 0.99, wind_persist: 0.4 })
}

/// Angle between two direction indices in units of 45 degrees (0..=4).
pub fn direction_gap(a: usize, b: usize) -> usize {
    let d = (a as i64 - b as i64).rem_euclid(8) as usize;
    d.min(8 - d)
}

impl Sailing {
    fn goal(&self) -> (i64, i64) {
        (self.grid as i64 - 1, self.grid as i64 - 1)
    }

    /// Cost of a legal move: unit base plus a tack penalty growing with the
    /// angle to the wind, stretched by sqrt(2) for diagonal moves.
    fn move_cost(gap: usize, action: usize) -> f64 {
        let tack = 2.0 * gap as f64 / 3.0;
        let length = if DX[action] != 0 && DY[action] != 0 {
            std::f64::consts::SQRT_2
        } else {
            1.0
        };
        (1.0 + tack) * length
    }

    fn wind_next(&self, wind: usize, rng: &mut dyn RngCore) -> usize {
        let rot = (1.0 - self.wind_persist) / 2.0;
        let probs = [self.wind_persist, rot, rot];
        match sample_categorical(&probs, rng) {
            0 => wind,
            1 => (wind + 1) % 8,
            _ => (wind + 7) % 8,
        }
    }
}

impl Environment for Sailing {
    fn id(&self) -> String {
        "sailing".into()
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn n_actions(&self) -> usize {
        8
    }

    fn sample_initial(&self, rng: &mut dyn RngCore) -> State {
        let g = self.grid as u64;
        let goal = self.goal();
        loop {
            let x = (rng.next_u64() % g) as i64;
            let y = (rng.next_u64() % g) as i64;
            if (x, y) == goal {
                continue;
            }
            let bd = (rng.next_u64() % 8) as f64;
            let wd = (rng.next_u64() % 8) as f64;
            return State::Features(vec![x as f64, y as f64, bd, wd]);
        }
    }

    fn step(&self, s: &State, a: usize, rng: &mut dyn RngCore) -> (State, f64, bool) {
        let f = s.features().expect("sailing state is a feature vector");
        let (x, y) = (f[0] as i64, f[1] as i64);
        let boat = f[2] as usize;
        let wind = f[3] as usize;
        if (x, y) == self.goal() {
            return (s.clone(), 0.0, true);
        }
        let gap = direction_gap(a, wind);
        let (nx, ny) = (x + DX[a], y + DY[a]);
        let off_grid =
            nx < 0 || ny < 0 || nx >= self.grid as i64 || ny >= self.grid as i64;
        let (nx, ny, nboat, reward) = if gap == 4 || off_grid {
            (x, y, boat, SAILING_R_MIN)
        } else {
            (nx, ny, a, -Self::move_cost(gap, a))
        };
        let nwind = self.wind_next(wind, rng);
        let next = State::Features(vec![nx as f64, ny as f64, nboat as f64, nwind as f64]);
        let terminal = (nx, ny) == self.goal();
        (next, reward, terminal)
    }
}
