use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use irl_bench::emit::{write_aggregate, write_failures};
use irl_bench::{
    aggregate, lirl_from_observations, run_accuracy_sweep, run_convergence_timing, run_mountaincar_eval, write_results,
    BenchError, ExperimentConfig, LirlSettings, SweepOutput,
};
use irl_core::cpirl::{posterior_mode, CpirlSettings, GaussianPrior};
use irl_core::env::{sample_trajectories_from, EnvSpec};
use irl_core::gpirl::{predict_reward, search_hyperparams, FitOptions, GpirlProblem, Hyperparams, NewtonRoute, SearchOptions};
use irl_core::{DecisionMap, Mdp, MdpDocument, ObservationFile, ObservationSet};

#[derive(Parser)]
#[command(name = "irl", version, about = "Inverse reinforcement learning from preference graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Materialize an environment spec into MDP JSON, optionally with teacher demonstrations.
    Env(EnvArgs),
    /// MAP reward under a Gaussian prior and the observed-policy constraints.
    Cpirl(CpirlArgs),
    /// Gaussian-process reward over state features.
    Gpirl(GpirlArgs),
    /// Max-margin LP baseline.
    Lirl(LirlArgs),
    /// Benchmark sweeps driven by a JSON config.
    Bench {
        #[arg(value_enum)]
        kind: BenchKind,
        #[arg(long)]
        config: PathBuf,
        /// Results CSV; overrides the config's output path.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        plot: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BenchKind {
    Accuracy,
    Timing,
    Car,
}

#[derive(Args)]
struct EnvArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write this many teacher trajectories to `--demos`.
    #[arg(long, default_value_t = 0)]
    count: usize,
    #[arg(long)]
    demos: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    horizon: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct Inputs {
    /// MDP JSON (any reward in it is ignored).
    #[arg(long)]
    mdp: PathBuf,
    /// Observation JSON: decision map, trajectory or trajectories.
    #[arg(long)]
    obs: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CpirlArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long, default_value_t = 1e-3)]
    margin: f64,
    #[arg(long, visible_alias = "rmin", default_value_t = -1.0, allow_hyphen_values = true)]
    r_min: f64,
    #[arg(long, visible_alias = "rmax", default_value_t = 1.0, allow_hyphen_values = true)]
    r_max: f64,
    /// Prior JSON `{"mean": [...], "covariance": [[...], ...]}`; default N(0, I).
    #[arg(long, conflicts_with_all = ["prior_mean", "prior_cov"])]
    prior: Option<PathBuf>,
    /// `zero` or a JSON array file.
    #[arg(long, default_value = "zero")]
    prior_mean: String,
    /// `identity` or a JSON matrix file (array of rows).
    #[arg(long, default_value = "identity")]
    prior_cov: String,
}

#[derive(Args)]
struct GpirlArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Override the MDP's discount factor.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    length_scale: f64,
    #[arg(long, default_value_t = 0.1)]
    noise_scale: f64,
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    /// Evidence evaluations for the hyperparameter search (1 = fit as given).
    #[arg(long, default_value_t = 1)]
    budget: usize,
    #[arg(long, default_value_t = 5)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Route::Auto)]
    route: Route,
}

#[derive(Clone, Copy, ValueEnum)]
enum Route {
    Auto,
    EdgeSpace,
    StateSpace,
}

#[derive(Args)]
struct LirlArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    r_max: f64,
}

#[derive(Deserialize)]
struct PriorFile {
    mean: Vec<f64>,
    covariance: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct GpirlOutput {
    theta: Hyperparams,
    log_evidence: f64,
    newton_iterations: usize,
    observed_states: Vec<usize>,
    /// Per observed state, the MAP reward of every action.
    map_reward: Vec<Vec<f64>>,
    /// Action-major `n·m` reward: MAP values at observed states, predictive means elsewhere.
    reward: Vec<f64>,
    predictions: Vec<StatePrediction>,
}

#[derive(Serialize)]
struct StatePrediction {
    state: usize,
    mean: Vec<f64>,
    variance: Vec<f64>,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Run(String),
}

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Config(m) => Failure::Config(m),
            other => Failure::Run(other.to_string()),
        }
    }
}

impl From<irl_core::IrlError> for Failure {
    fn from(e: irl_core::IrlError) -> Self {
        Failure::Run(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn config_err(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Config(format!("{}: {e}", path.display()))
}

fn write_json(out: Option<&Path>, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Run(e.to_string()))?;
    match out {
        Some(path) => std::fs::write(path, text + "\n").map_err(|e| Failure::Run(format!("{}: {e}", path.display()))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn load_inputs(inputs: &Inputs) -> CliResult<(MdpDocument, DecisionMap)> {
    let doc = MdpDocument::load(&inputs.mdp).map_err(|e| config_err(&inputs.mdp, e))?;
    let obs = ObservationFile::load(&inputs.obs).map_err(|e| config_err(&inputs.obs, e))?;
    let (decisions, warnings) = obs.to_decision_map(Some(&doc.mdp))?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    Ok((doc, decisions))
}

fn env_command(args: &EnvArgs) -> CliResult<()> {
    let text = std::fs::read_to_string(&args.spec).map_err(|e| config_err(&args.spec, e))?;
    let spec: EnvSpec = serde_json::from_str(&text).map_err(|e| config_err(&args.spec, e))?;
    let env = spec.build().map_err(|e| config_err(&args.spec, e))?;
    let features = (0..env.mdp.n_states()).map(|s| env.features(s)).collect();
    let doc = MdpDocument { mdp: env.mdp.clone(), features: Some(features) };
    let json = doc.to_json()?;
    match &args.out {
        Some(path) => std::fs::write(path, json).map_err(|e| Failure::Run(format!("{}: {e}", path.display())))?,
        None => println!("{json}"),
    }
    if let Some(path) = &args.demos {
        let trajs = sample_trajectories_from(&env.mdp, &env.teacher, args.count, args.horizon, args.seed, &env.starts, &env.goals)?;
        ObservationFile::from_trajectories(&trajs).save(path)?;
    }
    Ok(())
}

fn read_json_file<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| config_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| config_err(path, e))
}

fn prior_from_parts(source: &Path, mean: Vec<f64>, covariance: Vec<Vec<f64>>) -> CliResult<GaussianPrior> {
    let k = mean.len();
    if covariance.len() != k || covariance.iter().any(|row| row.len() != k) {
        return Err(config_err(source, "covariance must be square and match the mean"));
    }
    let cov = DMatrix::from_fn(k, k, |i, j| covariance[i][j]);
    GaussianPrior::new(DVector::from_vec(mean), cov).map_err(|e| config_err(source, e))
}

fn cpirl_command(args: &CpirlArgs) -> CliResult<()> {
    let (doc, decisions) = load_inputs(&args.inputs)?;
    let n = doc.mdp.n_states();
    let prior = match &args.prior {
        Some(path) => {
            let p: PriorFile = read_json_file(path)?;
            prior_from_parts(path, p.mean, p.covariance)?
        }
        None => {
            let mean = match args.prior_mean.as_str() {
                "zero" => vec![0.0; n],
                file => read_json_file(Path::new(file))?,
            };
            let cov = match args.prior_cov.as_str() {
                "identity" => (0..mean.len()).map(|i| (0..mean.len()).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect(),
                file => read_json_file(Path::new(file))?,
            };
            prior_from_parts(Path::new(&args.prior_cov), mean, cov)?
        }
    };
    if prior.mean().len() != n {
        return Err(Failure::Config(format!("prior has dimension {}, the MDP has {n} states", prior.mean().len())));
    }
    let settings = CpirlSettings { margin: args.margin, r_min: args.r_min, r_max: args.r_max };
    let solution = posterior_mode(&doc.mdp.without_reward(), &decisions, &prior, &settings)?;
    write_json(args.inputs.out.as_deref(), &solution)
}

/// Normalized state index, for MDP files without features.
fn index_feature(n: usize, s: usize) -> DVector<f64> {
    DVector::from_element(1, if n > 1 { s as f64 / (n - 1) as f64 } else { 0.0 })
}

fn gpirl_command(args: &GpirlArgs) -> CliResult<()> {
    let (doc, decisions) = load_inputs(&args.inputs)?;
    let mdp: Mdp = match args.gamma {
        Some(g) => doc.mdp.with_discount(g).map_err(|e| Failure::Config(e.to_string()))?.without_reward(),
        None => doc.mdp.without_reward(),
    };
    let (n, m) = (mdp.n_states(), mdp.n_actions());
    let featurize = |s: usize| match &doc.features {
        Some(f) => f[s].clone(),
        None => index_feature(n, s),
    };
    let (obs, warnings) = ObservationSet::from_decisions(&decisions, m, featurize)?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    let problem = GpirlProblem::new(&mdp, obs)?;
    let init = Hyperparams::new(vec![args.length_scale; m], vec![args.noise_scale; m], args.sigma)?;
    let route = match args.route {
        Route::Auto => NewtonRoute::Auto,
        Route::EdgeSpace => NewtonRoute::EdgeSpace,
        Route::StateSpace => NewtonRoute::StateSpace,
    };
    let opts = SearchOptions {
        restarts: args.restarts,
        seed: args.seed,
        fit: FitOptions { route, ..FitOptions::default() },
        ..SearchOptions::default()
    };
    let outcome = search_hyperparams(&problem, &init, args.budget, &opts)?;
    let model = outcome.model;
    let observed = model.observations.states().to_vec();
    let predictions = (0..n)
        .filter(|s| observed.binary_search(s).is_err())
        .map(|s| {
            let p = predict_reward(&model, &featurize(s));
            StatePrediction { state: s, mean: p.iter().map(|q| q.mean).collect(), variance: p.iter().map(|q| q.variance).collect() }
        })
        .collect();
    let map_reward = (0..observed.len()).map(|i| (0..m).map(|a| model.map_value(i, a)).collect()).collect();
    let output = GpirlOutput {
        reward: model.complete_reward(n, featurize).as_slice().to_vec(),
        theta: outcome.hyperparams,
        map_reward,
        log_evidence: model.log_evidence,
        newton_iterations: model.newton_iterations,
        observed_states: observed,
        predictions,
    };
    write_json(args.inputs.out.as_deref(), &output)
}

fn lirl_command(args: &LirlArgs) -> CliResult<()> {
    let (doc, decisions) = load_inputs(&args.inputs)?;
    let settings = LirlSettings { lambda: args.lambda, r_max: args.r_max };
    let solution = lirl_from_observations(&doc.mdp.without_reward(), &decisions, &settings)?;
    write_json(args.inputs.out.as_deref(), &solution)
}

fn bench_command(kind: BenchKind, config_path: &Path, out: Option<&Path>, plot: Option<&Path>) -> CliResult<()> {
    let config = ExperimentConfig::load(config_path)?;
    let sweep: SweepOutput = match kind {
        BenchKind::Accuracy => run_accuracy_sweep(&config)?,
        BenchKind::Timing => run_convergence_timing(&config)?,
        BenchKind::Car => run_mountaincar_eval(&config)?,
    };
    let csv_path = out.map(Path::to_path_buf).or_else(|| config.output.csv.clone());
    let create = |p: &Path| std::fs::File::create(p).map_err(|e| Failure::Run(format!("{}: {e}", p.display())));
    match &csv_path {
        Some(p) => write_results(&sweep.results, create(p)?)?,
        None => write_results(&sweep.results, std::io::stdout().lock())?,
    }
    let plot_path = plot.map(Path::to_path_buf).or_else(|| config.output.plot.clone()).or_else(|| csv_path.as_ref().map(|p| p.with_extension("plot.csv")));
    if let Some(p) = plot_path {
        write_aggregate(&aggregate(&sweep.results), create(&p)?)?;
    }
    if !sweep.failures.is_empty() {
        let fail_path = config.output.failures.clone().or_else(|| csv_path.as_ref().map(|p| p.with_extension("failures.csv")));
        match fail_path {
            Some(p) => write_failures(&sweep.failures, create(&p)?)?,
            None => write_failures(&sweep.failures, std::io::stderr().lock())?,
        }
        return Err(Failure::Run(format!("{} sweep cell(s) failed", sweep.failures.len())));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Env(a) => env_command(a),
        Command::Cpirl(a) => cpirl_command(a),
        Command::Gpirl(a) => gpirl_command(a),
        Command::Lirl(a) => lirl_command(a),
        Command::Bench { kind, config, out, plot } => bench_command(*kind, config, out.as_deref(), plot.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Run(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
