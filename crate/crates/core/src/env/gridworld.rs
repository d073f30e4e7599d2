//! Stochastic GridWorld with five actions: stay, north, east, south, west.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{IrlError, Result};
use crate::mdp::{Mdp, Reward};

pub const STAY: usize = 0;
pub const NORTH: usize = 1;
pub const EAST: usize = 2;
pub const SOUTH: usize = 3;
pub const WEST: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridWorldSpec {
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub obstacles: BTreeSet<(usize, usize)>,
    pub goal: (usize, usize),
    #[serde(default = "default_success")]
    pub move_success: f64,
    /// Total mass of the three unintended directions.
    #[serde(default = "default_slip")]
    pub move_slip: f64,
    #[serde(default = "default_stay_fail")]
    pub move_stay_fail: f64,
    #[serde(default = "default_goal_reward")]
    pub goal_reward: f64,
    #[serde(default = "default_discount")]
    pub discount: f64,
}

fn default_success() -> f64 {
    0.65
}
fn default_slip() -> f64 {
    0.2
}
fn default_stay_fail() -> f64 {
    0.15
}
fn default_goal_reward() -> f64 {
    1.0
}
fn default_discount() -> f64 {
    0.9
}

impl GridWorldSpec {
    /// Open grid with the default movement law.
    pub fn open(width: usize, height: usize, goal: (usize, usize)) -> Self {
        GridWorldSpec {
            width,
            height,
            obstacles: BTreeSet::new(),
            goal,
            move_success: default_success(),
            move_slip: default_slip(),
            move_stay_fail: default_stay_fail(),
            goal_reward: default_goal_reward(),
            discount: default_discount(),
        }
    }

    /// Random goal and obstacles covering `density` of the cells. Layouts are
    /// redrawn until every free cell can reach the goal.
    pub fn random(width: usize, height: usize, density: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&density) {
            return Err(IrlError::Invalid(format!("obstacle density {density} outside [0, 1)")));
        }
        let cells = width * height;
        let n_obstacles = ((cells as f64) * density).round() as usize;
        if n_obstacles + 1 >= cells {
            return Err(IrlError::Invalid("too many obstacles for the grid".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..10_000 {
            let goal = (rng.gen_range(0..width), rng.gen_range(0..height));
            let mut obstacles = BTreeSet::new();
            while obstacles.len() < n_obstacles {
                let c = (rng.gen_range(0..width), rng.gen_range(0..height));
                if c != goal {
                    obstacles.insert(c);
                }
            }
            let spec = GridWorldSpec { obstacles, ..GridWorldSpec::open(width, height, goal) };
            if spec.all_free_cells_connected() {
                return Ok(spec);
            }
        }
        Err(IrlError::Invalid("could not draw a connected obstacle layout".into()))
    }

    pub fn n_states(&self) -> usize {
        self.width * self.height
    }

    pub fn state(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn coords(&self, s: usize) -> (usize, usize) {
        (s % self.width, s / self.width)
    }

    pub fn is_obstacle(&self, s: usize) -> bool {
        self.obstacles.contains(&self.coords(s))
    }

    pub fn goal_state(&self) -> usize {
        self.state(self.goal.0, self.goal.1)
    }

    pub fn free_states(&self) -> Vec<usize> {
        (0..self.n_states()).filter(|&s| !self.is_obstacle(s)).collect()
    }

    /// Neighbour of `s` in `direction`, or `None` off-grid or into an obstacle.
    pub fn neighbour(&self, s: usize, direction: usize) -> Option<usize> {
        let (x, y) = self.coords(s);
        let (nx, ny) = match direction {
            NORTH => (Some(x), y.checked_add(1).filter(|&v| v < self.height)),
            EAST => (x.checked_add(1).filter(|&v| v < self.width), Some(y)),
            SOUTH => (Some(x), y.checked_sub(1)),
            WEST => (x.checked_sub(1), Some(y)),
            _ => return None,
        };
        let t = self.state(nx?, ny?);
        (!self.is_obstacle(t)).then_some(t)
    }

    fn all_free_cells_connected(&self) -> bool {
        let goal = self.goal_state();
        let mut seen = vec![false; self.n_states()];
        let mut queue = VecDeque::from([goal]);
        seen[goal] = true;
        while let Some(s) = queue.pop_front() {
            for d in [NORTH, EAST, SOUTH, WEST] {
                if let Some(t) = self.neighbour(s, d) {
                    if !seen[t] {
                        seen[t] = true;
                        queue.push_back(t);
                    }
                }
            }
        }
        self.free_states().iter().all(|&s| seen[s])
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(IrlError::Invalid("grid dimensions must be positive".into()));
        }
        let total = self.move_success + self.move_slip + self.move_stay_fail;
        if (total - 1.0).abs() > 1e-12 || [self.move_success, self.move_slip, self.move_stay_fail].iter().any(|&p| p < 0.0) {
            return Err(IrlError::Invalid(format!("movement probabilities must be nonnegative and sum to 1 (got {total})")));
        }
        if self.goal.0 >= self.width || self.goal.1 >= self.height {
            return Err(IrlError::Invalid("goal outside the grid".into()));
        }
        if self.obstacles.iter().any(|&(x, y)| x >= self.width || y >= self.height) {
            return Err(IrlError::Invalid("obstacle outside the grid".into()));
        }
        if self.obstacles.contains(&self.goal) {
            return Err(IrlError::Invalid("goal cell is an obstacle".into()));
        }
        Ok(())
    }

    /// `goal_reward` at the goal, 0 elsewhere.
    pub fn true_reward(&self) -> DVector<f64> {
        let mut r = DVector::zeros(self.n_states());
        r[self.goal_state()] = self.goal_reward;
        r
    }
}

/// Five-action MDP. A move goes in its direction with `move_success`, in each
/// other direction with `move_slip/3` and stays with `move_stay_fail`; mass
/// aimed off-grid or into an obstacle stays put. Obstacle cells self-loop.
pub fn gridworld_mdp(spec: &GridWorldSpec) -> Result<Mdp> {
    spec.validate()?;
    let n = spec.n_states();
    let mut transitions = vec![DMatrix::zeros(n, n); 5];
    for s in 0..n {
        transitions[STAY][(s, s)] = 1.0;
        for a in [NORTH, EAST, SOUTH, WEST] {
            let p = &mut transitions[a];
            if spec.is_obstacle(s) {
                p[(s, s)] = 1.0;
                continue;
            }
            p[(s, s)] += spec.move_stay_fail;
            for d in [NORTH, EAST, SOUTH, WEST] {
                let mass = if d == a { spec.move_success } else { spec.move_slip / 3.0 };
                let t = spec.neighbour(s, d).unwrap_or(s);
                p[(s, t)] += mass;
            }
        }
    }
    Mdp::new(transitions, spec.discount, Some(Reward::State(spec.true_reward())))
}

/// `(x/(w−1), y/(h−1))`; a dimension of size 1 maps to 0.
pub fn gridworld_features(spec: &GridWorldSpec, s: usize) -> DVector<f64> {
    let (x, y) = spec.coords(s);
    let scale = |v: usize, size: usize| if size > 1 { v as f64 / (size - 1) as f64 } else { 0.0 };
    DVector::from_vec(vec![scale(x, spec.width), scale(y, spec.height)])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interior_north_row() {
        let spec = GridWorldSpec::open(5, 5, (0, 0));
        let mdp = gridworld_mdp(&spec).unwrap();
        let s = spec.state(2, 2);
        let p = mdp.transition(NORTH);
        assert!((p[(s, spec.state(2, 3))] - 0.65).abs() < 1e-15);
        for t in [spec.state(3, 2), spec.state(1, 2), spec.state(2, 1)] {
            assert!((p[(s, t)] - 0.2 / 3.0).abs() < 1e-15);
        }
        assert!((p[(s, s)] - 0.15).abs() < 1e-15);
    }

    #[test]
    fn walls_and_obstacles_keep_mass() {
        let mut spec = GridWorldSpec::open(3, 3, (2, 2));
        spec.obstacles.insert((1, 0));
        let mdp = gridworld_mdp(&spec).unwrap();
        let corner = spec.state(0, 0);
        let p = mdp.transition(WEST);
        // West and south hit walls, east hits the obstacle.
        assert!((p[(corner, corner)] - (0.15 + 0.65 + 0.2 / 3.0 * 2.0)).abs() < 1e-12);
        assert!((p.row(corner).sum() - 1.0).abs() < 1e-12);
        let obstacle = spec.state(1, 0);
        for a in 0..5 {
            assert_eq!(mdp.transition(a)[(obstacle, obstacle)], 1.0);
        }
        assert_eq!(mdp.transition(STAY), &DMatrix::identity(9, 9));
    }

    #[test]
    fn random_layout_is_connected_and_seeded() {
        let a = GridWorldSpec::random(10, 10, 0.1, 7).unwrap();
        let b = GridWorldSpec::random(10, 10, 0.1, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.obstacles.len(), 10);
        assert!(!a.obstacles.contains(&a.goal));
        assert!(gridworld_mdp(&a).is_ok());
    }

    #[test]
    fn feature_corners() {
        let spec = GridWorldSpec::open(4, 3, (0, 0));
        assert_eq!(gridworld_features(&spec, 0).as_slice(), &[0.0, 0.0]);
        assert_eq!(gridworld_features(&spec, 11).as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn bad_probabilities_rejected() {
        let mut spec = GridWorldSpec::open(2, 2, (0, 0));
        spec.move_slip = 0.3;
        assert!(gridworld_mdp(&spec).is_err());
    }
}
