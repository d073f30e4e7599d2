//! Under-powered car in a valley, discretized onto a position × velocity grid.
//!
//! The car must back up the left slope to gather momentum before it can
//! climb to the goal on the right.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{IrlError, Result};
use crate::mdp::{Mdp, Reward};

pub const REVERSE: usize = 0;
pub const COAST: usize = 1;
pub const FORWARD: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MountainCarSpec {
    pub position_bins: usize,
    pub velocity_bins: usize,
    pub position_min: f64,
    pub position_max: f64,
    /// Velocities are clipped to `±velocity_max`.
    pub velocity_max: f64,
    pub thrust: f64,
    /// Slope term: `v ← v − gravity·cos(3x)`.
    pub gravity: f64,
    /// Continuous steps simulated per discrete transition.
    pub substeps: usize,
    pub goal_position: f64,
    pub discount: f64,
}

impl MountainCarSpec {
    /// 10 position × 6 velocity bins.
    pub fn sixty() -> Self {
        MountainCarSpec {
            position_bins: 10,
            velocity_bins: 6,
            position_min: -1.2,
            position_max: 0.6,
            velocity_max: 0.07,
            thrust: 0.001,
            gravity: 0.0025,
            substeps: 8,
            goal_position: 0.5,
            discount: 0.95,
        }
    }

    /// 10 position × 12 velocity bins.
    pub fn one_twenty() -> Self {
        MountainCarSpec { velocity_bins: 12, ..Self::sixty() }
    }

    pub fn n_states(&self) -> usize {
        self.position_bins * self.velocity_bins
    }

    pub fn state(&self, position_bin: usize, velocity_bin: usize) -> usize {
        position_bin * self.velocity_bins + velocity_bin
    }

    pub fn bins(&self, s: usize) -> (usize, usize) {
        (s / self.velocity_bins, s % self.velocity_bins)
    }

    fn grid(lo: f64, hi: f64, k: usize, i: usize) -> f64 {
        lo + (hi - lo) * i as f64 / (k - 1) as f64
    }

    pub fn position_center(&self, bin: usize) -> f64 {
        Self::grid(self.position_min, self.position_max, self.position_bins, bin)
    }

    pub fn velocity_center(&self, bin: usize) -> f64 {
        Self::grid(-self.velocity_max, self.velocity_max, self.velocity_bins, bin)
    }

    /// `(position, velocity)` at the centre of state `s`'s cell.
    pub fn center(&self, s: usize) -> (f64, f64) {
        let (i, j) = self.bins(s);
        (self.position_center(i), self.velocity_center(j))
    }

    fn nearest(lo: f64, hi: f64, k: usize, x: f64) -> usize {
        // Halfway points go to the lower bin.
        let t = ((x - lo) / (hi - lo) * (k - 1) as f64 - 0.5).ceil();
        t.clamp(0.0, (k - 1) as f64) as usize
    }

    /// State whose cell centre is nearest to `(x, v)`.
    pub fn snap(&self, x: f64, v: f64) -> usize {
        let i = Self::nearest(self.position_min, self.position_max, self.position_bins, x);
        let j = Self::nearest(-self.velocity_max, self.velocity_max, self.velocity_bins, v);
        self.state(i, j)
    }

    pub fn is_goal(&self, s: usize) -> bool {
        self.center(s).0 >= self.goal_position
    }

    pub fn goal_states(&self) -> Vec<bool> {
        (0..self.n_states()).map(|s| self.is_goal(s)).collect()
    }

    /// State nearest to the valley floor at rest.
    pub fn valley_rest_state(&self) -> usize {
        self.snap(-std::f64::consts::PI / 6.0, 0.0)
    }

    /// One continuous step; the left wall stops the car.
    pub fn physics_step(&self, x: f64, v: f64, action: usize) -> (f64, f64) {
        let push = (action as f64 - 1.0) * self.thrust;
        let v = (v + push - self.gravity * (3.0 * x).cos()).clamp(-self.velocity_max, self.velocity_max);
        let x = x + v;
        if x < self.position_min {
            (self.position_min, 0.0)
        } else {
            (x.min(self.position_max), v)
        }
    }

    /// Continuous state after one discrete transition from `(x, v)`.
    pub fn advance(&self, mut x: f64, mut v: f64, action: usize) -> (f64, f64) {
        for _ in 0..self.substeps {
            (x, v) = self.physics_step(x, v, action);
            if x >= self.goal_position {
                break;
            }
        }
        (x, v)
    }

    pub fn validate(&self) -> Result<()> {
        if self.position_bins < 2 || self.velocity_bins < 2 {
            return Err(IrlError::Invalid("mountain car needs at least two bins per dimension".into()));
        }
        if !(self.position_min < self.goal_position && self.goal_position <= self.position_max) {
            return Err(IrlError::Invalid("goal position must lie inside the track".into()));
        }
        if !(self.velocity_max > 0.0 && self.thrust > 0.0 && self.substeps > 0) {
            return Err(IrlError::Invalid("velocity bound, thrust and substeps must be positive".into()));
        }
        if !self.goal_states().iter().any(|&g| g) {
            return Err(IrlError::Invalid("no position bin lies at or beyond the goal".into()));
        }
        Ok(())
    }

    /// 1 at goal states, 0 elsewhere.
    pub fn true_reward(&self) -> DVector<f64> {
        DVector::from_iterator(self.n_states(), self.goal_states().into_iter().map(|g| if g { 1.0 } else { 0.0 }))
    }
}

/// Deterministic MDP: each cell centre is advanced `substeps` times and
/// snapped to the nearest cell. Goal states are absorbing.
pub fn mountaincar_mdp(spec: &MountainCarSpec) -> Result<Mdp> {
    spec.validate()?;
    let n = spec.n_states();
    let mut transitions = vec![DMatrix::zeros(n, n); 3];
    for s in 0..n {
        for (a, p) in transitions.iter_mut().enumerate() {
            let t = if spec.is_goal(s) {
                s
            } else {
                let (x, v) = spec.center(s);
                let (x, v) = spec.advance(x, v, a);
                spec.snap(x, v)
            };
            p[(s, t)] = 1.0;
        }
    }
    Mdp::new(transitions, spec.discount, Some(Reward::State(spec.true_reward())))
}

/// `(position bin/(P−1), velocity bin/(V−1))`.
pub fn mountaincar_features(spec: &MountainCarSpec, s: usize) -> DVector<f64> {
    let (i, j) = spec.bins(s);
    DVector::from_vec(vec![i as f64 / (spec.position_bins - 1) as f64, j as f64 / (spec.velocity_bins - 1) as f64])
}
