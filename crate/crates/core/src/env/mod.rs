//! Benchmark environments, feature maps and teacher demonstrations.

pub mod gridworld;
pub mod mountaincar;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{IrlError, Result};
use crate::mdp::{Mdp, Policy, DEFAULT_VI_TOL};
use crate::observations::Trajectory;

pub use gridworld::{gridworld_features, gridworld_mdp, GridWorldSpec};
pub use mountaincar::{mountaincar_features, mountaincar_mdp, MountainCarSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvSpec {
    Gridworld(GridWorldSpec),
    MountainCar(MountainCarSpec),
}

/// A built benchmark: the MDP with its true reward, the teacher policy and
/// the bookkeeping needed for demonstrations and evaluation.
#[derive(Debug, Clone)]
pub struct Environment {
    pub spec: EnvSpec,
    pub mdp: Mdp,
    /// Value-iteration policy under the true reward.
    pub teacher: Policy,
    /// States episodes and demonstrations may start from.
    pub starts: Vec<usize>,
    pub goals: Vec<bool>,
}

impl EnvSpec {
    pub fn build(&self) -> Result<Environment> {
        let (mdp, starts, goals) = match self {
            EnvSpec::Gridworld(g) => {
                let mdp = gridworld_mdp(g)?;
                let mut goals = vec![false; g.n_states()];
                goals[g.goal_state()] = true;
                (mdp, g.free_states(), goals)
            }
            EnvSpec::MountainCar(c) => {
                let mdp = mountaincar_mdp(c)?;
                let goals = c.goal_states();
                let starts = (0..c.n_states()).filter(|&s| !goals[s]).collect();
                (mdp, starts, goals)
            }
        };
        let (_, teacher, _) = mdp.value_iteration(DEFAULT_VI_TOL)?;
        Ok(Environment { spec: self.clone(), mdp, teacher, starts, goals })
    }

    pub fn name(&self) -> String {
        match self {
            EnvSpec::Gridworld(g) => format!("gridworld{}x{}", g.width, g.height),
            EnvSpec::MountainCar(c) => format!("mountaincar{}", c.n_states()),
        }
    }

    pub fn n_states(&self) -> usize {
        match self {
            EnvSpec::Gridworld(g) => g.n_states(),
            EnvSpec::MountainCar(c) => c.n_states(),
        }
    }
}

/// Feature vector of a state in `[0, 1]²`.
pub fn featurize(spec: &EnvSpec, state: usize) -> DVector<f64> {
    match spec {
        EnvSpec::Gridworld(g) => gridworld_features(g, state),
        EnvSpec::MountainCar(c) => mountaincar_features(c, state),
    }
}

impl Environment {
    pub fn features(&self, state: usize) -> DVector<f64> {
        featurize(&self.spec, state)
    }

    pub fn is_goal(&self, s: usize) -> bool {
        self.goals[s]
    }
}

/// Successor of `s` under `action`, drawn from the transition row.
pub fn sample_successor(mdp: &Mdp, s: usize, action: usize, rng: &mut impl Rng) -> usize {
    let row = mdp.transition(action).row(s);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = s;
    for (t, &p) in row.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = t;
            if u < acc {
                return t;
            }
        }
    }
    last
}

/// `count` teacher trajectories of at most `horizon` steps from uniformly
/// drawn start states in `starts`. A trajectory ends after recording its
/// first visit to a state flagged in `terminal` (if any).
pub fn sample_trajectories_from(
    mdp: &Mdp,
    teacher: &Policy,
    count: usize,
    horizon: usize,
    seed: u64,
    starts: &[usize],
    terminal: &[bool],
) -> Result<Vec<Trajectory>> {
    teacher.check(mdp)?;
    if count > 0 && starts.is_empty() {
        return Err(IrlError::Invalid("no start states to sample from".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut s = starts[rng.gen_range(0..starts.len())];
        let mut steps = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let a = teacher.action(s);
            steps.push((s, a));
            if terminal.get(s).copied().unwrap_or(false) {
                break;
            }
            s = sample_successor(mdp, s, a, &mut rng);
        }
        out.push(Trajectory::new(steps));
    }
    Ok(out)
}

/// [`sample_trajectories_from`] over every state, without terminal states.
pub fn sample_trajectories(mdp: &Mdp, teacher: &Policy, count: usize, horizon: usize, seed: u64) -> Result<Vec<Trajectory>> {
    let starts: Vec<usize> = (0..mdp.n_states()).collect();
    sample_trajectories_from(mdp, teacher, count, horizon, seed, &starts, &[])
}

/// Steps until `policy` first reaches a goal state from `start`, or `None`
/// if it does not within `horizon`.
pub fn steps_to_goal(mdp: &Mdp, policy: &Policy, start: usize, goals: &[bool], horizon: usize, rng: &mut impl Rng) -> Option<usize> {
    let mut s = start;
    for t in 0..=horizon {
        if goals[s] {
            return Some(t);
        }
        if t == horizon {
            break;
        }
        s = sample_successor(mdp, s, policy.action(s), rng);
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn count_zero_and_reproducible() {
        let env = EnvSpec::Gridworld(GridWorldSpec::open(4, 4, (3, 3))).build().unwrap();
        assert!(sample_trajectories(&env.mdp, &env.teacher, 0, 10, 1).unwrap().is_empty());
        let a = sample_trajectories_from(&env.mdp, &env.teacher, 5, 12, 9, &env.starts, &env.goals).unwrap();
        let b = sample_trajectories_from(&env.mdp, &env.teacher, 5, 12, 9, &env.starts, &env.goals).unwrap();
        assert_eq!(a, b);
        for t in &a {
            assert!(!t.is_empty() && t.len() <= 12);
            assert!(t.support_warnings(&env.mdp).is_empty());
        }
    }

    #[test]
    fn deterministic_chain_is_followed() {
        let shift = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        let mdp = Mdp::new(vec![shift], 0.5, None).unwrap();
        let trajs = sample_trajectories(&mdp, &Policy(vec![0, 0, 0]), 3, 6, 4).unwrap();
        for t in trajs {
            for w in t.steps.windows(2) {
                assert_eq!(w[1].0, (w[0].0 + 1) % 3);
            }
        }
    }

    #[test]
    fn teacher_reaches_goal() {
        let spec = GridWorldSpec::random(6, 6, 0.1, 3).unwrap();
        let env = EnvSpec::Gridworld(spec).build().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for &s in &env.starts {
            assert!(steps_to_goal(&env.mdp, &env.teacher, s, &env.goals, 200, &mut rng).is_some());
        }
    }
}
