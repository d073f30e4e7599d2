//! Declarative experiment configuration, loaded from JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use irl_core::cpirl::CpirlSettings;
use irl_core::env::{EnvSpec, GridWorldSpec, MountainCarSpec};
use irl_core::gpirl::{FitOptions, Hyperparams};

use crate::error::{BenchError, Result};
use crate::lirl::LirlSettings;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Lirl,
    Cpirl,
    Gpirl,
    /// The environment's own reward: an upper reference.
    TrueReward,
    /// Uniform random state reward in `[−1, 1]`: a lower reference.
    RandomReward,
    ZeroReward,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Lirl => "lirl",
            Algorithm::Cpirl => "cpirl",
            Algorithm::Gpirl => "gpirl",
            Algorithm::TrueReward => "true_reward",
            Algorithm::RandomReward => "random_reward",
            Algorithm::ZeroReward => "zero_reward",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CarPreset {
    #[default]
    Sixty,
    OneTwenty,
}

/// Environment family; random layouts are drawn per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BenchEnv {
    RandomGridworld {
        width: usize,
        height: usize,
        #[serde(default = "default_density")]
        obstacle_density: f64,
        #[serde(default = "default_goal_reward")]
        goal_reward: f64,
        #[serde(default = "default_grid_discount")]
        discount: f64,
    },
    Gridworld(GridWorldSpec),
    MountainCar {
        #[serde(default)]
        preset: CarPreset,
        /// Full physics override; takes precedence over `preset`.
        #[serde(default)]
        spec: Option<MountainCarSpec>,
    },
}

fn default_density() -> f64 {
    0.1
}
fn default_goal_reward() -> f64 {
    1.0
}
fn default_grid_discount() -> f64 {
    0.9
}

impl BenchEnv {
    pub fn random_grid(width: usize, height: usize) -> Self {
        BenchEnv::RandomGridworld {
            width,
            height,
            obstacle_density: default_density(),
            goal_reward: default_goal_reward(),
            discount: default_grid_discount(),
        }
    }

    /// The same family at a different square grid size.
    pub fn resized(&self, size: usize) -> Result<BenchEnv> {
        match self {
            BenchEnv::RandomGridworld { obstacle_density, goal_reward, discount, .. } => Ok(BenchEnv::RandomGridworld {
                width: size,
                height: size,
                obstacle_density: *obstacle_density,
                goal_reward: *goal_reward,
                discount: *discount,
            }),
            _ => Err(BenchError::Config("grid_sizes requires a random_gridworld environment".into())),
        }
    }

    pub fn instantiate(&self, seed: u64) -> Result<EnvSpec> {
        Ok(match self {
            BenchEnv::RandomGridworld { width, height, obstacle_density, goal_reward, discount } => {
                let mut g = GridWorldSpec::random(*width, *height, *obstacle_density, seed)?;
                g.goal_reward = *goal_reward;
                g.discount = *discount;
                EnvSpec::Gridworld(g)
            }
            BenchEnv::Gridworld(g) => EnvSpec::Gridworld(g.clone()),
            BenchEnv::MountainCar { preset, spec } => EnvSpec::MountainCar(spec.clone().unwrap_or(match preset {
                CarPreset::Sixty => MountainCarSpec::sixty(),
                CarPreset::OneTwenty => MountainCarSpec::one_twenty(),
            })),
        })
    }

    fn grid_dims(&self) -> Option<(usize, usize)> {
        match self {
            BenchEnv::RandomGridworld { width, height, .. } => Some((*width, *height)),
            BenchEnv::Gridworld(g) => Some((g.width, g.height)),
            BenchEnv::MountainCar { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpirlSettings {
    /// Initial hyperparameters; by default the length scale matches the
    /// median nearest-neighbour spacing of the observed features and
    /// `σ_j = σ = 0.1`.
    #[serde(default)]
    pub hyperparams: Option<Hyperparams>,
    /// Evidence evaluations for the hyperparameter search; 1 fits `hyperparams` only.
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default)]
    pub search_seed: u64,
    /// Restart points are drawn within `±spread` of the initial log-θ.
    #[serde(default = "default_spread")]
    pub spread: f64,
    #[serde(default)]
    pub fit: FitOptions,
}

fn default_budget() -> usize {
    1
}
fn default_restarts() -> usize {
    5
}
fn default_spread() -> f64 {
    1.0
}

impl Default for GpirlSettings {
    fn default() -> Self {
        GpirlSettings { hyperparams: None, budget: 1, restarts: 5, search_seed: 0, spread: 1.0, fit: FitOptions::default() }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct OutputPaths {
    #[serde(default)]
    pub csv: Option<PathBuf>,
    #[serde(default)]
    pub plot: Option<PathBuf>,
    /// Failure records; defaults to `<csv>.failures.csv`.
    #[serde(default)]
    pub failures: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub env: BenchEnv,
    pub algorithms: Vec<Algorithm>,
    #[serde(default = "default_counts")]
    pub trajectory_counts: Vec<usize>,
    #[serde(default = "default_episodes")]
    pub evaluation_episodes: usize,
    pub seeds: Vec<u64>,
    /// Demonstration length; defaults to `width + height` on grids, 100 for the car.
    #[serde(default)]
    pub trajectory_horizon: Option<usize>,
    /// Episode cutoff; defaults to `4·(width + height)` on grids, 500 for the car.
    #[serde(default)]
    pub evaluation_horizon: Option<usize>,
    /// Square grid sizes for the convergence-timing benchmark.
    #[serde(default = "default_sizes")]
    pub grid_sizes: Vec<usize>,
    /// Fraction of states observed in the mountain-car benchmark.
    #[serde(default = "default_fraction")]
    pub observed_fraction: f64,
    #[serde(default)]
    pub output: OutputPaths,
    #[serde(default)]
    pub cpirl: CpirlSettings,
    #[serde(default)]
    pub lirl: LirlSettings,
    #[serde(default)]
    pub gpirl: GpirlSettings,
    /// Record wall-clock milliseconds; off by default so outputs are reproducible.
    #[serde(default)]
    pub record_wall_time: bool,
}

fn default_counts() -> Vec<usize> {
    vec![1, 2, 5, 10, 20, 50]
}
fn default_episodes() -> usize {
    200
}
fn default_sizes() -> Vec<usize> {
    vec![10, 20, 30]
}
fn default_fraction() -> f64 {
    0.5
}

impl ExperimentConfig {
    pub fn new(env: BenchEnv, algorithms: Vec<Algorithm>, seeds: Vec<u64>) -> Self {
        ExperimentConfig {
            env,
            algorithms,
            trajectory_counts: default_counts(),
            evaluation_episodes: default_episodes(),
            seeds,
            trajectory_horizon: None,
            evaluation_horizon: None,
            grid_sizes: default_sizes(),
            observed_fraction: default_fraction(),
            output: OutputPaths::default(),
            cpirl: CpirlSettings::default(),
            lirl: LirlSettings::default(),
            gpirl: GpirlSettings::default(),
            record_wall_time: false,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| BenchError::Config(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(BenchError::Config(m.into()));
        if self.algorithms.is_empty() {
            return fail("at least one algorithm is required");
        }
        if self.seeds.is_empty() {
            return fail("at least one seed is required");
        }
        if self.trajectory_counts.is_empty() {
            return fail("at least one trajectory count is required");
        }
        if !(self.observed_fraction > 0.0 && self.observed_fraction <= 1.0) {
            return fail("observed_fraction must lie in (0, 1]");
        }
        if self.gpirl.budget == 0 {
            return fail("gpirl budget must be at least 1");
        }
        Ok(())
    }

    pub fn trajectory_horizon(&self) -> usize {
        self.trajectory_horizon.unwrap_or_else(|| self.env.grid_dims().map_or(100, |(w, h)| w + h))
    }

    pub fn evaluation_horizon(&self) -> usize {
        self.evaluation_horizon.unwrap_or_else(|| self.env.grid_dims().map_or(500, |(w, h)| 4 * (w + h)))
    }
}
