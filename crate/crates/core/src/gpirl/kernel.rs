//! Per-action squared-exponential kernels and the block-diagonal prior covariance.

use nalgebra::{linalg::Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{IrlError, Result};
use crate::linalg::{chol_logdet, cholesky_with_jitter};

/// Kernel and likelihood hyperparameters.
///
/// Searched in log space; see [`Hyperparams::to_log`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// `κ_j`, the inverse squared length scale of action `j`'s kernel.
    pub length_scale: Vec<f64>,
    /// `σ_j`, the noise added on the diagonal of action `j`'s kernel.
    pub noise_scale: Vec<f64>,
    /// Preference noise `σ` of the strict-edge likelihood.
    pub sigma: f64,
}

impl Hyperparams {
    pub fn new(length_scale: Vec<f64>, noise_scale: Vec<f64>, sigma: f64) -> Result<Self> {
        let hp = Hyperparams { length_scale, noise_scale, sigma };
        hp.check()?;
        Ok(hp)
    }

    /// `κ = 1`, `σ_j = 0.1`, `σ = 0.1`.
    pub fn defaults(m: usize) -> Self {
        Hyperparams { length_scale: vec![1.0; m], noise_scale: vec![0.1; m], sigma: 0.1 }
    }

    pub fn n_actions(&self) -> usize {
        self.length_scale.len()
    }

    pub fn check(&self) -> Result<()> {
        if self.length_scale.len() != self.noise_scale.len() || self.length_scale.is_empty() {
            return Err(IrlError::Dimension("per-action hyperparameter lists must be nonempty and equal length".into()));
        }
        let ok = self.length_scale.iter().all(|&k| k > 0.0 && k.is_finite())
            && self.noise_scale.iter().all(|&s| s >= 0.0 && s.is_finite())
            && self.sigma > 0.0
            && self.sigma.is_finite();
        if ok {
            Ok(())
        } else {
            Err(IrlError::Invalid(format!("hyperparameters out of range: {self:?}")))
        }
    }

    /// `[ln κ_0 … ln κ_{m−1}, ln σ_0 … ln σ_{m−1}, ln σ]`.
    pub fn to_log(&self) -> Vec<f64> {
        self.length_scale
            .iter()
            .chain(self.noise_scale.iter())
            .chain(std::iter::once(&self.sigma))
            .map(|v| v.ln())
            .collect()
    }

    pub fn from_log(m: usize, theta: &[f64]) -> Result<Self> {
        if theta.len() != 2 * m + 1 {
            return Err(IrlError::Dimension(format!("log-hyperparameter vector must have length {}", 2 * m + 1)));
        }
        let e: Vec<f64> = theta.iter().map(|v| v.exp()).collect();
        Hyperparams::new(e[..m].to_vec(), e[m..2 * m].to_vec(), e[2 * m])
    }
}

/// `exp(−½ κ_j ‖x − y‖²) + σ_j² · [same training point]`.
pub fn kernel_eval(hp: &Hyperparams, action: usize, x: &DVector<f64>, y: &DVector<f64>, same_index: bool) -> f64 {
    let d2 = (x - y).norm_squared();
    let noise = if same_index { hp.noise_scale[action].powi(2) } else { 0.0 };
    (-0.5 * hp.length_scale[action] * d2).exp() + noise
}

/// Per-action Gram matrices over the observed states. The stored blocks
/// already include any jitter needed for factorization, so `blocks[j]` is
/// exactly the covariance that `factors[j]` factors.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    blocks: Vec<DMatrix<f64>>,
    factors: Vec<Cholesky<f64, Dyn>>,
    jitter: Vec<f64>,
}

impl KernelMatrix {
    pub fn n_actions(&self) -> usize {
        self.blocks.len()
    }

    /// Number of observed states `n̂`.
    pub fn block_size(&self) -> usize {
        self.blocks[0].nrows()
    }

    pub fn dim(&self) -> usize {
        self.block_size() * self.n_actions()
    }

    pub fn block(&self, action: usize) -> &DMatrix<f64> {
        &self.blocks[action]
    }

    pub fn factor(&self, action: usize) -> &Cholesky<f64, Dyn> {
        &self.factors[action]
    }

    pub fn jitter(&self, action: usize) -> f64 {
        self.jitter[action]
    }

    /// The full block-diagonal `K`.
    pub fn full(&self) -> DMatrix<f64> {
        let k = self.block_size();
        let mut out = DMatrix::zeros(self.dim(), self.dim());
        for (j, b) in self.blocks.iter().enumerate() {
            out.view_mut((j * k, j * k), (k, k)).copy_from(b);
        }
        out
    }

    /// `K⁻¹`, block by block.
    pub fn inverse(&self) -> DMatrix<f64> {
        let k = self.block_size();
        let mut out = DMatrix::zeros(self.dim(), self.dim());
        for (j, f) in self.factors.iter().enumerate() {
            out.view_mut((j * k, j * k), (k, k)).copy_from(&f.inverse());
        }
        out
    }

    /// `K · v` for a dense `N × c` block.
    pub fn mul(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        let k = self.block_size();
        let mut out = DMatrix::zeros(v.nrows(), v.ncols());
        for (j, b) in self.blocks.iter().enumerate() {
            let rows = v.rows(j * k, k);
            out.rows_mut(j * k, k).copy_from(&(b * rows));
        }
        out
    }

    pub fn mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        let k = self.block_size();
        let mut out = DVector::zeros(v.len());
        for (j, b) in self.blocks.iter().enumerate() {
            out.rows_mut(j * k, k).copy_from(&(b * v.rows(j * k, k)));
        }
        out
    }

    /// `K⁻¹ v`.
    pub fn solve_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        let k = self.block_size();
        let mut out = DVector::zeros(v.len());
        for (j, f) in self.factors.iter().enumerate() {
            out.rows_mut(j * k, k).copy_from(&f.solve(&v.rows(j * k, k).into_owned()));
        }
        out
    }

    /// `Lᵀ · v`, with `K = L Lᵀ` blockwise.
    pub fn factor_transpose_mul(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        let k = self.block_size();
        let mut out = DMatrix::zeros(v.nrows(), v.ncols());
        for (j, f) in self.factors.iter().enumerate() {
            out.rows_mut(j * k, k).copy_from(&(f.l().transpose() * v.rows(j * k, k)));
        }
        out
    }

    pub fn log_det(&self) -> f64 {
        self.factors.iter().map(chol_logdet).sum()
    }
}

/// Gram matrices of every action over `features`, with noise on the diagonal.
pub fn build_covariance(hp: &Hyperparams, features: &[DVector<f64>]) -> Result<KernelMatrix> {
    hp.check()?;
    let k = features.len();
    if k == 0 {
        return Err(IrlError::Invalid("covariance needs at least one state".into()));
    }
    let mut blocks = Vec::with_capacity(hp.n_actions());
    let mut factors = Vec::with_capacity(hp.n_actions());
    let mut jitter = Vec::with_capacity(hp.n_actions());
    for a in 0..hp.n_actions() {
        let mut gram = DMatrix::from_fn(k, k, |i, j| kernel_eval(hp, a, &features[i], &features[j], i == j));
        gram = (&gram + gram.transpose()) * 0.5;
        let (factor, used) = cholesky_with_jitter(&gram)?;
        for i in 0..k {
            gram[(i, i)] += used;
        }
        blocks.push(gram);
        factors.push(factor);
        jitter.push(used);
    }
    Ok(KernelMatrix { blocks, factors, jitter })
}
