//! Benchmark sweeps: accuracy curves, value-iteration convergence and the
//! mountain-car step counts.
//!
//! Each seed is an independent job with its own generators derived from the
//! seed; jobs run on a small thread pool and results are merged in job order,
//! so output does not depend on scheduling.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use irl_core::cpirl::{posterior_mode, GaussianPrior};
use irl_core::env::{sample_trajectories_from, steps_to_goal, Environment};
use irl_core::gpirl::hyper::{optimize_hyperparams, SearchOptions};
use irl_core::gpirl::{GpirlProblem, Hyperparams};
use irl_core::mdp::DEFAULT_VI_TOL;
use irl_core::{DecisionMap, IrlError, ObservationSet, Policy, QTable, Reward};

use crate::config::{Algorithm, BenchEnv, ExperimentConfig};
use crate::error::Result;
use crate::lirl::lirl_from_observations;

/// Q-tie tolerance for policy matching.
pub const TIE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub algorithm: String,
    pub env: String,
    /// Trajectories in the accuracy sweep; observed states otherwise.
    pub n_traj: usize,
    pub seed: u64,
    pub accuracy: f64,
    /// Value-iteration sweeps to converge under the inferred reward.
    pub iterations: usize,
    /// Zero unless `record_wall_time` is set.
    pub wall_ms: f64,
    /// Steps to goal per evaluation episode; `None` is a timeout.
    pub steps: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub algorithm: String,
    pub env: String,
    pub n_traj: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepOutput {
    pub results: Vec<RunResult>,
    pub failures: Vec<FailureRecord>,
}

impl SweepOutput {
    fn absorb(&mut self, other: SweepOutput) {
        self.results.extend(other.results);
        self.failures.extend(other.failures);
    }

    pub fn of(&self, algorithm: Algorithm) -> impl Iterator<Item = &RunResult> {
        self.results.iter().filter(move |r| r.algorithm == algorithm.name())
    }
}

/// Independent generator seed for a named stream of one job.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over the combined input
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B3_E50F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_DEMOS: u64 = 1;
const STREAM_STARTS: u64 = 2;
const STREAM_RANDOM_REWARD: u64 = 3;
const STREAM_OBSERVED: u64 = 4;
const STREAM_EPISODE: u64 = 1 << 32;

/// Run `job(i)` for every index on a scoped thread pool; outputs are
/// returned in index order.
fn run_jobs<T: Send>(count: usize, job: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(count.max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..count).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= count {
                    break;
                }
                let out = job(i);
                slots.lock().expect("job slot lock")[i] = Some(out);
            });
        }
    });
    slots.into_inner().expect("job slot lock").into_iter().map(|s| s.expect("every job ran")).collect()
}

fn merge(outputs: Vec<SweepOutput>) -> SweepOutput {
    let mut all = SweepOutput::default();
    outputs.into_iter().for_each(|o| all.absorb(o));
    all
}

/// Reward inferred by `algorithm` from the observed decisions.
pub fn infer_reward(
    algorithm: Algorithm,
    env: &Environment,
    decisions: &DecisionMap,
    config: &ExperimentConfig,
    seed: u64,
) -> irl_core::Result<Reward> {
    let mdp = env.mdp.without_reward();
    let n = mdp.n_states();
    let m = mdp.n_actions();
    match algorithm {
        Algorithm::TrueReward => env.mdp.reward().cloned().ok_or(IrlError::RewardUnspecified),
        Algorithm::ZeroReward => Ok(Reward::State(DVector::zeros(n))),
        Algorithm::RandomReward => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_RANDOM_REWARD));
            Ok(Reward::State(DVector::from_fn(n, |_, _| rng.gen_range(-1.0..=1.0))))
        }
        Algorithm::Lirl => {
            let sol = lirl_from_observations(&mdp, decisions, &config.lirl)?;
            Ok(Reward::State(DVector::from_vec(sol.reward)))
        }
        Algorithm::Cpirl => {
            let sol = posterior_mode(&mdp, decisions, &GaussianPrior::standard(n), &config.cpirl)?;
            Ok(Reward::State(DVector::from_vec(sol.reward)))
        }
        Algorithm::Gpirl => {
            let (obs, _) = ObservationSet::from_decisions(decisions, m, |s| env.features(s))?;
            let problem = GpirlProblem::new(&mdp, obs)?;
            let settings = &config.gpirl;
            let init = match &settings.hyperparams {
                Some(hp) => hp.clone(),
                None => nearest_neighbour_hyperparams(problem.observations.features(), m),
            };
            let model = if settings.budget <= 1 {
                problem.fit(&init, &settings.fit)?
            } else {
                let opts = SearchOptions {
                    restarts: settings.restarts,
                    seed: settings.search_seed,
                    spread: settings.spread,
                    fit: settings.fit,
                    ..SearchOptions::default()
                };
                optimize_hyperparams(&problem, &init, settings.budget, &opts)?.1
            };
            Ok(Reward::StateAction(model.complete_reward(n, |s| env.features(s))))
        }
    }
}

/// Length scale set to the median nearest-neighbour spacing of the training
/// features (`κ = 1/h²`), noise scales at their defaults. Falls back to
/// [`Hyperparams::defaults`] with fewer than two distinct points.
pub fn nearest_neighbour_hyperparams(features: &[DVector<f64>], m: usize) -> Hyperparams {
    let mut nearest: Vec<f64> = features
        .iter()
        .enumerate()
        .filter_map(|(i, x)| {
            features
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, y)| (x - y).norm_squared())
                .filter(|&d| d > 0.0)
                .min_by(f64::total_cmp)
        })
        .collect();
    let defaults = Hyperparams::defaults(m);
    if nearest.is_empty() {
        return defaults;
    }
    nearest.sort_by(f64::total_cmp);
    let h2 = nearest[nearest.len() / 2];
    Hyperparams { length_scale: vec![1.0 / h2; m], ..defaults }
}

/// Optimal policy, Q-factors and iteration count under an inferred reward.
pub fn apprentice(env: &Environment, reward: Reward) -> irl_core::Result<(Policy, QTable, usize)> {
    let mdp = env.mdp.with_reward(reward)?;
    let (values, policy, iterations) = mdp.value_iteration(DEFAULT_VI_TOL)?;
    let q = mdp.q_factors(&values)?;
    Ok((policy, q, iterations))
}

/// Fraction of `states` at which the teacher's action is greedy in `q` up to ties.
pub fn policy_match(q: &QTable, teacher: &Policy, states: &[usize]) -> f64 {
    if states.is_empty() {
        return 1.0;
    }
    let hits = states.iter().filter(|&&s| q.is_near_greedy(s, teacher.action(s), TIE_TOL)).count();
    hits as f64 / states.len() as f64
}

/// Evaluation episodes shared by every algorithm of one seed.
struct Episodes {
    starts: Vec<usize>,
    seeds: Vec<u64>,
    horizon: usize,
}

impl Episodes {
    fn draw(env: &Environment, count: usize, horizon: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_STARTS));
        let starts = (0..count).map(|_| env.starts[rng.gen_range(0..env.starts.len())]).collect();
        let seeds = (0..count as u64).map(|e| derive_seed(seed, STREAM_EPISODE + e)).collect();
        Episodes { starts, seeds, horizon }
    }

    fn run(&self, env: &Environment, policy: &Policy) -> Vec<Option<usize>> {
        self.starts
            .iter()
            .zip(&self.seeds)
            .map(|(&s, &k)| steps_to_goal(&env.mdp, policy, s, &env.goals, self.horizon, &mut ChaCha8Rng::seed_from_u64(k)))
            .collect()
    }
}

fn success_rate(steps: &[Option<usize>]) -> f64 {
    if steps.is_empty() {
        return 0.0;
    }
    steps.iter().filter(|s| s.is_some()).count() as f64 / steps.len() as f64
}

/// Whether a learned episode is on par with the teacher's: both time out, or
/// the learned step count is within `tol` (relative) of the teacher's.
pub fn on_par(learned: Option<usize>, teacher: Option<usize>, tol: f64) -> bool {
    match (learned, teacher) {
        (None, None) => true,
        (Some(l), Some(t)) => (l as f64 - t as f64).abs() <= tol * t as f64,
        _ => false,
    }
}

/// Within-20% on-par fraction, episode by episode.
pub fn on_par_fraction(learned: &[Option<usize>], teacher: &[Option<usize>]) -> f64 {
    if learned.is_empty() {
        return 0.0;
    }
    let hits = learned.iter().zip(teacher).filter(|(l, t)| on_par(**l, **t, 0.2)).count();
    hits as f64 / learned.len() as f64
}

struct Cell<'a> {
    algorithm: Algorithm,
    env: &'a Environment,
    n_traj: usize,
    seed: u64,
}

impl Cell<'_> {
    fn failure(&self, error: impl ToString) -> FailureRecord {
        FailureRecord {
            algorithm: self.algorithm.name().into(),
            env: self.env.spec.name(),
            n_traj: self.n_traj,
            seed: self.seed,
            error: error.to_string(),
        }
    }

    fn result(&self, accuracy: f64, iterations: usize, started: Instant, config: &ExperimentConfig, steps: Vec<Option<usize>>) -> RunResult {
        RunResult {
            algorithm: self.algorithm.name().into(),
            env: self.env.spec.name(),
            n_traj: self.n_traj,
            seed: self.seed,
            accuracy,
            iterations,
            wall_ms: if config.record_wall_time { started.elapsed().as_secs_f64() * 1e3 } else { 0.0 },
            steps,
        }
    }
}

fn seed_failure(config: &ExperimentConfig, env_name: String, n_traj: &[usize], seed: u64, error: &dyn ToString) -> SweepOutput {
    let mut out = SweepOutput::default();
    for &n in n_traj {
        for alg in &config.algorithms {
            out.failures.push(FailureRecord {
                algorithm: alg.name().into(),
                env: env_name.clone(),
                n_traj: n,
                seed,
                error: error.to_string(),
            });
        }
    }
    out
}

fn family_name(env: &BenchEnv) -> String {
    match env {
        BenchEnv::RandomGridworld { width, height, .. } => format!("gridworld{width}x{height}"),
        BenchEnv::Gridworld(g) => format!("gridworld{}x{}", g.width, g.height),
        BenchEnv::MountainCar { .. } => "mountaincar".into(),
    }
}

fn build_env(family: &BenchEnv, seed: u64) -> Result<Environment> {
    Ok(family.instantiate(seed)?.build()?)
}

/// Apprenticeship accuracy per (algorithm, trajectory count, seed).
///
/// A seed's demonstrations for smaller counts are prefixes of those for
/// larger counts, and all algorithms of a seed face the same evaluation
/// episodes.
pub fn run_accuracy_sweep(config: &ExperimentConfig) -> Result<SweepOutput> {
    config.validate()?;
    let horizon = config.trajectory_horizon();
    let eval_horizon = config.evaluation_horizon();
    let max_count = config.trajectory_counts.iter().copied().max().unwrap_or(0);
    let outputs = run_jobs(config.seeds.len(), |job| {
        let seed = config.seeds[job];
        let env = match build_env(&config.env, seed) {
            Ok(env) => env,
            Err(e) => return seed_failure(config, family_name(&config.env), &config.trajectory_counts, seed, &e),
        };
        let demos = match sample_trajectories_from(&env.mdp, &env.teacher, max_count, horizon, derive_seed(seed, STREAM_DEMOS), &env.starts, &env.goals) {
            Ok(d) => d,
            Err(e) => return seed_failure(config, env.spec.name(), &config.trajectory_counts, seed, &e),
        };
        let episodes = Episodes::draw(&env, config.evaluation_episodes, eval_horizon, seed);
        let mut out = SweepOutput::default();
        for &count in &config.trajectory_counts {
            let decisions = DecisionMap::new(demos[..count].iter().flat_map(|t| t.steps.iter().copied()).collect());
            for &algorithm in &config.algorithms {
                let cell = Cell { algorithm, env: &env, n_traj: count, seed };
                let started = Instant::now();
                let outcome = infer_reward(algorithm, &env, &decisions, config, seed).and_then(|r| apprentice(&env, r));
                match outcome {
                    Ok((policy, _, iterations)) => {
                        let steps = episodes.run(&env, &policy);
                        let accuracy = success_rate(&steps);
                        out.results.push(cell.result(accuracy, iterations, started, config, steps));
                    }
                    Err(e) => out.failures.push(cell.failure(e)),
                }
            }
        }
        out
    });
    Ok(merge(outputs))
}

/// Value-iteration convergence under each algorithm's reward, inferred from
/// the complete teacher policy over every free cell, per grid size and seed.
///
/// `accuracy` holds the policy-match fraction over free cells (up to Q-ties);
/// `wall_ms` times inference plus value iteration.
pub fn run_convergence_timing(config: &ExperimentConfig) -> Result<SweepOutput> {
    config.validate()?;
    let families = config.grid_sizes.iter().map(|&size| config.env.resized(size)).collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, u64)> = (0..families.len()).flat_map(|f| config.seeds.iter().map(move |&s| (f, s))).collect();
    let outputs = run_jobs(jobs.len(), |job| {
        let (f, seed) = jobs[job];
        let env = match build_env(&families[f], seed) {
            Ok(env) => env,
            Err(e) => return seed_failure(config, family_name(&families[f]), &[0], seed, &e),
        };
        let decisions = DecisionMap::new(env.starts.iter().map(|&s| (s, env.teacher.action(s))).collect());
        let mut out = SweepOutput::default();
        for &algorithm in &config.algorithms {
            let cell = Cell { algorithm, env: &env, n_traj: env.starts.len(), seed };
            let started = Instant::now();
            match infer_reward(algorithm, &env, &decisions, config, seed).and_then(|r| apprentice(&env, r)) {
                Ok((_, q, iterations)) => {
                    let accuracy = policy_match(&q, &env.teacher, &env.starts);
                    out.results.push(cell.result(accuracy, iterations, started, config, Vec::new()));
                }
                Err(e) => out.failures.push(cell.failure(e)),
            }
        }
        out
    });
    Ok(merge(outputs))
}

/// Mountain-car generalization: each algorithm sees the teacher's action at
/// a random `observed_fraction` of states; steps-to-goal of the resulting
/// policy are recorded per episode next to the teacher's (`true_reward` row,
/// always emitted).
///
/// `accuracy` is the fraction of episodes on par with the teacher (within
/// 20% of its steps, or both timing out).
pub fn run_mountaincar_eval(config: &ExperimentConfig) -> Result<SweepOutput> {
    config.validate()?;
    let eval_horizon = config.evaluation_horizon();
    let outputs = run_jobs(config.seeds.len(), |job| {
        let seed = config.seeds[job];
        let env = match build_env(&config.env, seed) {
            Ok(env) => env,
            Err(e) => return seed_failure(config, family_name(&config.env), &[0], seed, &e),
        };
        let n = env.mdp.n_states();
        let mut states: Vec<usize> = (0..n).collect();
        states.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_OBSERVED)));
        let keep = ((n as f64 * config.observed_fraction).round() as usize).clamp(1, n);
        states.truncate(keep);
        states.sort_unstable();
        let decisions = DecisionMap::new(states.iter().map(|&s| (s, env.teacher.action(s))).collect());
        let episodes = Episodes::draw(&env, config.evaluation_episodes, eval_horizon, seed);
        let teacher_steps = episodes.run(&env, &env.teacher);
        let mut algorithms = vec![Algorithm::TrueReward];
        algorithms.extend(config.algorithms.iter().copied().filter(|&a| a != Algorithm::TrueReward));
        let mut out = SweepOutput::default();
        for algorithm in algorithms {
            let cell = Cell { algorithm, env: &env, n_traj: keep, seed };
            let started = Instant::now();
            match infer_reward(algorithm, &env, &decisions, config, seed).and_then(|r| apprentice(&env, r)) {
                Ok((policy, _, iterations)) => {
                    let steps = if algorithm == Algorithm::TrueReward { teacher_steps.clone() } else { episodes.run(&env, &policy) };
                    let accuracy = on_par_fraction(&steps, &teacher_steps);
                    out.results.push(cell.result(accuracy, iterations, started, config, steps));
                }
                Err(e) => out.failures.push(cell.failure(e)),
            }
        }
        out
    });
    Ok(merge(outputs))
}
