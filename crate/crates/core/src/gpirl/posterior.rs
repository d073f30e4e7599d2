//! Negative log posterior over the latent reward and its Newton minimizer.
//!
//! `U(r) = ½ rᵀK⁻¹r + Σ_equiv ½ f² − Σ_strict log Φ(f/(√2σ))` with `f = C r`,
//! so `∇U = K⁻¹r + Cᵀh` and `∇²U = K⁻¹ + Cᵀ W C` with `h`, `W` the per-edge
//! slopes and curvatures.

use nalgebra::{DMatrix, DVector};

use super::kernel::KernelMatrix;
use super::latent::EdgeSystem;
use super::likelihood::{equiv_term, strict_term, EdgeTerm};
use crate::error::{IrlError, Result};
use crate::linalg::{cholesky_spd, inf_norm, weighted_gram};

pub const GRADIENT_TOL: f64 = 1e-8;
pub const MAX_HALVINGS: usize = 50;
pub const MAX_NEWTON_ITERATIONS: usize = 500;

/// How Newton systems are solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NewtonRoute {
    /// Edge space when there are fewer edges than latent entries.
    #[default]
    Auto,
    /// Woodbury identity on `I + W^½ C K Cᵀ W^½` (size `E`).
    EdgeSpace,
    /// Direct factorization of `K⁻¹ + CᵀWC` (size `n̂m`).
    StateSpace,
}

#[derive(Debug, Clone)]
struct EdgeCache {
    /// `K Cᵀ` (`N × E`).
    kc_t: DMatrix<f64>,
    /// `C K Cᵀ` (`E × E`).
    k_f: DMatrix<f64>,
}

/// The posterior energy for fixed kernels, edges and preference noise.
#[derive(Debug, Clone)]
pub struct Posterior<'a> {
    kernels: &'a KernelMatrix,
    edges: &'a EdgeSystem,
    sigma: f64,
    cache: Option<EdgeCache>,
}

/// Per-edge slopes `h` and curvatures `W` at some `f`.
#[derive(Debug, Clone)]
pub struct EdgeDerivatives {
    pub value: f64,
    pub slope: DVector<f64>,
    pub curvature: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub reward: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
    /// `U` after every accepted step, starting with `U(init)`.
    pub trace: Vec<f64>,
}

impl<'a> Posterior<'a> {
    pub fn new(kernels: &'a KernelMatrix, edges: &'a EdgeSystem, sigma: f64, route: NewtonRoute) -> Result<Self> {
        if kernels.dim() != edges.rows.ncols() {
            return Err(IrlError::Dimension(format!(
                "kernel dimension {} but edge rows have {} columns",
                kernels.dim(),
                edges.rows.ncols()
            )));
        }
        if !(sigma > 0.0) {
            return Err(IrlError::Invalid("preference noise must be positive".into()));
        }
        let use_edges = match route {
            NewtonRoute::Auto => edges.len() < kernels.dim(),
            NewtonRoute::EdgeSpace => true,
            NewtonRoute::StateSpace => false,
        };
        let cache = (use_edges && !edges.is_empty()).then(|| {
            let kc_t = kernels.mul(&edges.rows.transpose());
            let k_f = &edges.rows * &kc_t;
            EdgeCache { k_f: (&k_f + k_f.transpose()) * 0.5, kc_t }
        });
        Ok(Posterior { kernels, edges, sigma, cache })
    }

    pub fn kernels(&self) -> &KernelMatrix {
        self.kernels
    }

    pub fn edges(&self) -> &EdgeSystem {
        self.edges
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn dim(&self) -> usize {
        self.kernels.dim()
    }

    pub fn uses_edge_space(&self) -> bool {
        self.cache.is_some()
    }

    fn terms(&self, f: &DVector<f64>) -> Vec<EdgeTerm> {
        let n_strict = self.edges.n_strict;
        f.iter()
            .enumerate()
            .map(|(e, &fe)| if e < n_strict { strict_term(fe, self.sigma) } else { equiv_term(fe) })
            .collect()
    }

    /// Likelihood part of `U` and its per-edge derivatives at `f = C r`.
    pub fn edge_derivatives(&self, r: &DVector<f64>) -> EdgeDerivatives {
        let f = &self.edges.rows * r;
        let e = f.len();
        let mut value = 0.0;
        let mut slope = DVector::zeros(e);
        let mut curvature = DVector::zeros(e);
        for (k, t) in self.terms(&f).into_iter().enumerate() {
            value += t.value;
            slope[k] = t.slope;
            curvature[k] = t.curvature;
        }
        EdgeDerivatives { value, slope, curvature }
    }

    /// `½ rᵀK⁻¹r`.
    pub fn prior_energy(&self, r: &DVector<f64>) -> f64 {
        0.5 * r.dot(&self.kernels.solve_vec(r))
    }

    /// `U(r)`.
    pub fn objective(&self, r: &DVector<f64>) -> f64 {
        self.prior_energy(r) + self.terms(&(&self.edges.rows * r)).iter().map(|t| t.value).sum::<f64>()
    }

    /// `∇ log P(G | S, r, θ) = −Cᵀh`.
    pub fn log_likelihood_gradient(&self, r: &DVector<f64>) -> DVector<f64> {
        -(self.edges.rows.transpose() * self.edge_derivatives(r).slope)
    }

    pub fn gradient(&self, r: &DVector<f64>) -> DVector<f64> {
        self.kernels.solve_vec(r) + self.edges.rows.transpose() * self.edge_derivatives(r).slope
    }

    /// `Π = CᵀWC`, the Hessian of the likelihood terms.
    pub fn likelihood_hessian(&self, r: &DVector<f64>) -> DMatrix<f64> {
        if self.edges.is_empty() {
            return DMatrix::zeros(self.dim(), self.dim());
        }
        weighted_gram(&self.edges.rows, &self.edge_derivatives(r).curvature)
    }

    pub fn hessian(&self, r: &DVector<f64>) -> DMatrix<f64> {
        self.kernels.inverse() + self.likelihood_hessian(r)
    }

    /// `S = I + W^½ C K Cᵀ W^½` and `W^½`; requires the edge cache.
    fn edge_system(&self, cache: &EdgeCache, curvature: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let sw = curvature.map(f64::sqrt);
        let e = sw.len();
        let mut b = DMatrix::from_fn(e, e, |i, j| sw[i] * cache.k_f[(i, j)] * sw[j]);
        for i in 0..e {
            b[(i, i)] += 1.0;
        }
        (b, sw)
    }

    /// `log |I + KΠ|` through the `E × E` form `|I + W^½ C K Cᵀ W^½|`.
    pub fn occam_log_det_edge_space(&self, r: &DVector<f64>) -> Result<f64> {
        if self.edges.is_empty() {
            return Ok(0.0);
        }
        let owned;
        let cache = match &self.cache {
            Some(c) => c,
            None => {
                let kc_t = self.kernels.mul(&self.edges.rows.transpose());
                let k_f = &self.edges.rows * &kc_t;
                owned = EdgeCache { k_f: (&k_f + k_f.transpose()) * 0.5, kc_t };
                &owned
            }
        };
        let d = self.edge_derivatives(r);
        let (b, _) = self.edge_system(cache, &d.curvature);
        let chol = cholesky_spd(b).ok_or_else(|| IrlError::numerical("Occam matrix is not positive definite"))?;
        Ok(crate::linalg::chol_logdet(&chol))
    }

    /// `log |I + LᵀΠL|` with `K = LLᵀ`, the `n̂m × n̂m` form.
    pub fn occam_log_det_state_space(&self, r: &DVector<f64>) -> Result<f64> {
        if self.edges.is_empty() {
            return Ok(0.0);
        }
        let d = self.edge_derivatives(r);
        // (C L)ᵀ W (C L) = Lᵀ Π L.
        let cl = self.kernels.factor_transpose_mul(&self.edges.rows.transpose()).transpose();
        let mut m = weighted_gram(&cl, &d.curvature);
        for i in 0..m.nrows() {
            m[(i, i)] += 1.0;
        }
        let chol = cholesky_spd(m).ok_or_else(|| IrlError::numerical("Occam matrix is not positive definite"))?;
        Ok(crate::linalg::chol_logdet(&chol))
    }

    pub fn occam_log_det(&self, r: &DVector<f64>) -> Result<f64> {
        if self.cache.is_some() {
            self.occam_log_det_edge_space(r)
        } else {
            self.occam_log_det_state_space(r)
        }
    }

    /// Newton direction `−(∇²U)⁻¹ ∇U` at `r`.
    fn direction(&self, r: &DVector<f64>, d: &EdgeDerivatives, grad: &DVector<f64>) -> Result<DVector<f64>> {
        if self.edges.is_empty() {
            return Ok(-r);
        }
        match &self.cache {
            Some(cache) => {
                let (b, sw) = self.edge_system(cache, &d.curvature);
                let chol = cholesky_spd(b).ok_or_else(|| IrlError::numerical("edge-space Newton matrix is not positive definite"))?;
                let f = &self.edges.rows * r;
                // K∇U = r + KCᵀh and C K ∇U = f + C K Cᵀ h.
                let k_grad = r + &cache.kc_t * &d.slope;
                let ck_grad = f + &cache.k_f * &d.slope;
                let inner = chol.solve(&sw.component_mul(&ck_grad)).component_mul(&sw);
                Ok(-(k_grad - &cache.kc_t * inner))
            }
            None => {
                let mut h = self.kernels.inverse();
                h += weighted_gram(&self.edges.rows, &d.curvature);
                let chol = cholesky_spd(h).ok_or_else(|| IrlError::numerical("Newton Hessian is not positive definite"))?;
                Ok(-chol.solve(grad))
            }
        }
    }

    /// Damped Newton from `init`; each accepted step strictly lowers `U`.
    /// Stops when `‖∇U‖_∞ < 1e-8`.
    pub fn newton_map(&self, init: &DVector<f64>) -> Result<NewtonOutcome> {
        if init.len() != self.dim() {
            return Err(IrlError::Dimension(format!("initial reward must have length {}", self.dim())));
        }
        let mut r = init.clone();
        let mut u = self.objective(&r);
        let mut trace = vec![u];
        for iteration in 0..MAX_NEWTON_ITERATIONS {
            let d = self.edge_derivatives(&r);
            let grad = self.kernels.solve_vec(&r) + self.edges.rows.transpose() * &d.slope;
            let gnorm = inf_norm(&grad);
            if gnorm < GRADIENT_TOL {
                return Ok(NewtonOutcome { reward: r, objective: u, iterations: iteration, gradient_norm: gnorm, trace });
            }
            let dir = self.direction(&r, &d, &grad)?;
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..=MAX_HALVINGS {
                let trial = &r + &dir * step;
                let ut = self.objective(&trial);
                if ut < u {
                    accepted = Some((trial, ut));
                    break;
                }
                step *= 0.5;
            }
            match accepted {
                Some((trial, ut)) => {
                    r = trial;
                    u = ut;
                    trace.push(u);
                }
                // U is flat to working precision along the Newton direction.
                None if gnorm < 1e3 * GRADIENT_TOL => {
                    return Ok(NewtonOutcome { reward: r, objective: u, iterations: iteration, gradient_norm: gnorm, trace });
                }
                None => {
                    return Err(IrlError::Numerical {
                        reason: format!("no decrease after {MAX_HALVINGS} step halvings (gradient norm {gnorm:e})"),
                        best: Some(r.as_slice().to_vec()),
                    })
                }
            }
        }
        Err(IrlError::Numerical {
            reason: format!("Newton iteration cap {MAX_NEWTON_ITERATIONS} reached"),
            best: Some(r.as_slice().to_vec()),
        })
    }
}

/// `U(r)`.
pub fn neg_log_posterior(kernels: &KernelMatrix, edges: &EdgeSystem, r: &DVector<f64>, sigma: f64) -> Result<f64> {
    Ok(Posterior::new(kernels, edges, sigma, NewtonRoute::StateSpace)?.objective(r))
}

/// MAP estimate of the latent reward from `init`.
pub fn newton_map(kernels: &KernelMatrix, edges: &EdgeSystem, sigma: f64, init: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(Posterior::new(kernels, edges, sigma, NewtonRoute::Auto)?.newton_map(init)?.reward)
}

/// Laplace estimate `log p(G | S, θ) ≈ −U(r̂) − ½ log|I + KΠ|`.
pub fn log_evidence(posterior: &Posterior<'_>, r_hat: &DVector<f64>) -> Result<f64> {
    let occam = posterior.occam_log_det(r_hat)?;
    let value = -posterior.objective(r_hat) - 0.5 * occam;
    if value.is_finite() {
        Ok(value)
    } else {
        Err(IrlError::numerical(format!("non-finite log evidence (Occam log-determinant {occam})")))
    }
}
