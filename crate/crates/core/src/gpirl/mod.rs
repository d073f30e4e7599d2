//! Gaussian-process reward inference from preference graphs.
//!
//! Each action `a` has a latent reward function over the observed states
//! with a squared-exponential prior. Preference edges constrain latent
//! Q-values, the MAP reward is found by Newton's method and kernel
//! hyperparameters are chosen by Laplace evidence.

pub mod hyper;
pub mod kernel;
pub mod latent;
pub mod likelihood;
pub mod posterior;

use nalgebra::{linalg::Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{IrlError, Result};
use crate::linalg::cholesky_with_jitter;
use crate::mdp::Mdp;
use crate::observations::ObservationSet;

pub use hyper::{optimize_hyperparams, search_hyperparams, SearchOptions, SearchOutcome};
pub use kernel::{build_covariance, kernel_eval, Hyperparams, KernelMatrix};
pub use latent::{latent_q, EdgeSystem, LatentQContext};
pub use likelihood::{equiv_edge_loglik, log_phi, strict_edge_loglik};
pub use posterior::{log_evidence, neg_log_posterior, newton_map, NewtonRoute, Posterior};

/// Which noise enters the training covariance used for prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictiveNoise {
    /// `K_j` with the kernel noise `σ_j²` on its diagonal.
    #[default]
    KernelNoise,
    /// The noiseless Gram matrix plus the preference noise `σ²`.
    PreferenceNoise,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct FitOptions {
    #[serde(default)]
    pub route: NewtonRoute,
    #[serde(default)]
    pub predictive_noise: PredictiveNoise,
}

/// Observations, latent context and edge rows: everything that does not
/// depend on the hyperparameters.
#[derive(Debug, Clone)]
pub struct GpirlProblem {
    pub observations: ObservationSet,
    pub context: LatentQContext,
    pub edges: EdgeSystem,
}

impl GpirlProblem {
    pub fn new(mdp: &Mdp, observations: ObservationSet) -> Result<Self> {
        let context = LatentQContext::new(mdp, &observations)?;
        Ok(Self::from_context(context, observations))
    }

    pub fn from_context(context: LatentQContext, observations: ObservationSet) -> Self {
        let edges = EdgeSystem::new(&context, &observations);
        GpirlProblem { observations, context, edges }
    }

    pub fn n_actions(&self) -> usize {
        self.context.n_actions()
    }

    /// Fit the MAP reward and its evidence at fixed hyperparameters.
    pub fn fit(&self, hp: &Hyperparams, opts: &FitOptions) -> Result<GpirlModel> {
        if hp.n_actions() != self.n_actions() {
            return Err(IrlError::Dimension(format!("hyperparameters for {} actions, problem has {}", hp.n_actions(), self.n_actions())));
        }
        let kernels = build_covariance(hp, self.observations.features())?;
        let posterior = Posterior::new(&kernels, &self.edges, hp.sigma, opts.route)?;
        let outcome = posterior.newton_map(&DVector::zeros(kernels.dim()))?;
        let log_evidence = log_evidence(&posterior, &outcome.reward)?;
        let predictive = predictive_blocks(hp, self.observations.features(), &kernels, &outcome.reward, opts.predictive_noise)?;
        Ok(GpirlModel {
            observations: self.observations.clone(),
            hyperparams: hp.clone(),
            map_reward: outcome.reward,
            objective: outcome.objective,
            newton_iterations: outcome.iterations,
            log_evidence,
            kernels,
            predictive,
        })
    }
}

/// Training covariance factor and weights `K_j⁻¹ r̂_j` for one action.
#[derive(Debug, Clone)]
struct PredictiveBlock {
    factor: Cholesky<f64, Dyn>,
    weights: DVector<f64>,
    prior_variance: f64,
}

fn predictive_blocks(
    hp: &Hyperparams,
    features: &[DVector<f64>],
    kernels: &KernelMatrix,
    r_hat: &DVector<f64>,
    noise: PredictiveNoise,
) -> Result<Vec<PredictiveBlock>> {
    let k = features.len();
    (0..hp.n_actions())
        .map(|a| {
            let r_a = r_hat.rows(a * k, k).into_owned();
            let (factor, noise_var) = match noise {
                PredictiveNoise::KernelNoise => (kernels.factor(a).clone(), hp.noise_scale[a].powi(2)),
                PredictiveNoise::PreferenceNoise => {
                    let s2 = hp.sigma * hp.sigma;
                    let gram = DMatrix::from_fn(k, k, |i, j| {
                        kernel_eval(hp, a, &features[i], &features[j], false) + if i == j { s2 } else { 0.0 }
                    });
                    (cholesky_with_jitter(&gram)?.0, s2)
                }
            };
            let weights = factor.solve(&r_a);
            Ok(PredictiveBlock { factor, weights, prior_variance: 1.0 + noise_var })
        })
        .collect()
}

/// A fitted model: MAP reward `r̂` over the observed states (action-major)
/// and its Laplace evidence.
#[derive(Debug, Clone)]
pub struct GpirlModel {
    pub observations: ObservationSet,
    pub hyperparams: Hyperparams,
    pub kernels: KernelMatrix,
    pub map_reward: DVector<f64>,
    pub objective: f64,
    pub newton_iterations: usize,
    pub log_evidence: f64,
    predictive: Vec<PredictiveBlock>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
}

impl GpirlModel {
    pub fn n_actions(&self) -> usize {
        self.hyperparams.n_actions()
    }

    /// `r̂_a` at observed state index `i`.
    pub fn map_value(&self, i: usize, action: usize) -> f64 {
        self.map_reward[action * self.observations.len() + i]
    }

    /// Reward over all `n` states of an MDP (action-major, length `n·m`):
    /// `r̂` at observed states and the predictive mean elsewhere.
    pub fn complete_reward(&self, n: usize, featurize: impl Fn(usize) -> DVector<f64>) -> DVector<f64> {
        let m = self.n_actions();
        let mut out = DVector::zeros(n * m);
        let mut local = vec![None; n];
        for (i, &s) in self.observations.states().iter().enumerate() {
            local[s] = Some(i);
        }
        for s in 0..n {
            match local[s] {
                Some(i) => (0..m).for_each(|a| out[a * n + s] = self.map_value(i, a)),
                None => {
                    for (a, p) in predict_reward(self, &featurize(s)).into_iter().enumerate() {
                        out[a * n + s] = p.mean;
                    }
                }
            }
        }
        out
    }
}

/// Posterior predictive mean and variance of every action's reward at a
/// new feature vector.
pub fn predict_reward(model: &GpirlModel, test_state: &DVector<f64>) -> Vec<Prediction> {
    let feats = model.observations.features();
    model
        .predictive
        .iter()
        .enumerate()
        .map(|(a, block)| {
            let k_star = DVector::from_fn(feats.len(), |i, _| kernel_eval(&model.hyperparams, a, &feats[i], test_state, false));
            let mean = k_star.dot(&block.weights);
            let variance = (block.prior_variance - k_star.dot(&block.factor.solve(&k_star))).max(0.0);
            Prediction { mean, variance }
        })
        .collect()
}
