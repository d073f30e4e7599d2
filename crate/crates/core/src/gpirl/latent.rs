//! Latent Q-values over the observed states.
//!
//! With `r` laid out action-major (`r[a·n̂ + i]` is the reward of action `a`
//! at observed state `i`), `Q(i, a) = r_a(i) + γ P̂_a(i,·) (I − γP̂_*)⁻¹ Î r`,
//! which is linear in `r`. Each preference edge therefore contributes one
//! row `c` with `f = c·r` the difference of two Q-values.

use nalgebra::{linalg::LU, DMatrix, DVector, Dyn};

use crate::error::{IrlError, Result};
use crate::linalg::discounted_system;
use crate::mdp::{Mdp, STOCHASTIC_TOL};
use crate::observations::ObservationSet;

#[derive(Debug, Clone)]
pub struct LatentQContext {
    n_obs: usize,
    m: usize,
    gamma: f64,
    /// `P̂_a`, restricted to the observed states and renormalized.
    p_hat: Vec<DMatrix<f64>>,
    /// Representative optimal action per observed state (`Î`'s nonzero columns).
    representative: Vec<usize>,
    propagator: LU<f64, Dyn, Dyn>,
    /// Row `a·n̂ + i` is `γ P̂_a(i,·) (I − γP̂_*)⁻¹`.
    discounted: DMatrix<f64>,
}

impl LatentQContext {
    /// Restrict `mdp`'s transitions to the observed states. Rows whose mass
    /// leaves the observed set entirely become self-loops.
    pub fn new(mdp: &Mdp, obs: &ObservationSet) -> Result<Self> {
        let states = obs.states();
        let k = states.len();
        let mut p_hat = Vec::with_capacity(mdp.n_actions());
        for a in 0..mdp.n_actions() {
            let p = mdp.transition(a);
            let mut block = DMatrix::from_fn(k, k, |i, j| p[(states[i], states[j])]);
            for i in 0..k {
                let mass: f64 = block.row(i).sum();
                if mass > 0.0 {
                    block.row_mut(i).unscale_mut(mass);
                } else {
                    block[(i, i)] = 1.0;
                }
            }
            p_hat.push(block);
        }
        let representative = obs.graphs().iter().map(|g| g.representative_action()).collect();
        Self::from_blocks(p_hat, representative, mdp.discount())
    }

    /// Context from explicit row-stochastic `n̂ × n̂` blocks.
    pub fn from_blocks(p_hat: Vec<DMatrix<f64>>, representative: Vec<usize>, gamma: f64) -> Result<Self> {
        let m = p_hat.len();
        let k = representative.len();
        if m == 0 || k == 0 {
            return Err(IrlError::Invalid("latent context needs at least one action and one state".into()));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(IrlError::Invalid(format!("discount {gamma} outside [0, 1)")));
        }
        for (a, b) in p_hat.iter().enumerate() {
            if b.nrows() != k || b.ncols() != k {
                return Err(IrlError::Dimension(format!("block {a} must be {k}x{k}")));
            }
            for i in 0..k {
                if b.row(i).iter().any(|&x| x < 0.0) || (b.row(i).sum() - 1.0).abs() > STOCHASTIC_TOL {
                    return Err(IrlError::Invalid(format!("block {a} row {i} is not stochastic")));
                }
            }
        }
        if let Some(&a) = representative.iter().find(|&&a| a >= m) {
            return Err(IrlError::Invalid(format!("representative action {a} out of range")));
        }
        let mut p_star = DMatrix::zeros(k, k);
        for (i, &a) in representative.iter().enumerate() {
            p_star.set_row(i, &p_hat[a].row(i));
        }
        let system = discounted_system(&p_star, gamma);
        let propagator = system.clone().lu();
        // Xᵀ = (I − γP̂_*)⁻ᵀ [P̂_0; …; P̂_{m−1}]ᵀ, solved once on the transpose.
        let mut stacked_t = DMatrix::zeros(k, k * m);
        for (a, b) in p_hat.iter().enumerate() {
            stacked_t.columns_mut(a * k, k).copy_from(&b.transpose());
        }
        let solved = system
            .transpose()
            .lu()
            .solve(&stacked_t)
            .ok_or_else(|| IrlError::numerical("singular latent propagator"))?;
        let discounted = solved.transpose() * gamma;
        Ok(LatentQContext { n_obs: k, m, gamma, p_hat, representative, propagator, discounted })
    }

    pub fn n_states(&self) -> usize {
        self.n_obs
    }

    pub fn n_actions(&self) -> usize {
        self.m
    }

    /// Latent dimension `n̂·m`.
    pub fn dim(&self) -> usize {
        self.n_obs * self.m
    }

    pub fn discount(&self) -> f64 {
        self.gamma
    }

    pub fn block(&self, action: usize) -> &DMatrix<f64> {
        &self.p_hat[action]
    }

    pub fn representative(&self, state: usize) -> usize {
        self.representative[state]
    }

    /// `Î`: one 1 per row, at the representative action's reward entry.
    pub fn selector(&self) -> DMatrix<f64> {
        let mut sel = DMatrix::zeros(self.n_obs, self.dim());
        for (i, &a) in self.representative.iter().enumerate() {
            sel[(i, a * self.n_obs + i)] = 1.0;
        }
        sel
    }

    /// `Î r`.
    pub fn select(&self, r: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.n_obs, |i, _| r[self.representative[i] * self.n_obs + i])
    }

    /// `(I − γP̂_*)⁻¹ v` through the cached factorization.
    pub fn propagate(&self, v: &DVector<f64>) -> DVector<f64> {
        self.propagator.solve(v).expect("propagator factor is nonsingular")
    }

    /// Coefficients `c` with `Q(state, action) = c·r`.
    pub fn q_row(&self, state: usize, action: usize) -> DVector<f64> {
        let k = self.n_obs;
        let mut row = DVector::zeros(self.dim());
        row[action * k + state] = 1.0;
        let d = self.discounted.row(action * k + state);
        for (j, &a) in self.representative.iter().enumerate() {
            row[a * k + j] += d[j];
        }
        row
    }

    /// Coefficients of `Q(state, u) − Q(state, v)`.
    pub fn difference_row(&self, state: usize, u: usize, v: usize) -> DVector<f64> {
        self.q_row(state, u) - self.q_row(state, v)
    }

    /// All latent Q-values as an `n̂ × m` matrix.
    pub fn q_values(&self, r: &DVector<f64>) -> DMatrix<f64> {
        let k = self.n_obs;
        let tail = &self.discounted * self.select(r);
        DMatrix::from_fn(k, self.m, |i, a| r[a * k + i] + tail[a * k + i])
    }
}

/// `Q(s, a) = r_a(s) + γ P̂_as (I − γP̂_*)⁻¹ Î r` for an observed state index.
pub fn latent_q(ctx: &LatentQContext, r: &DVector<f64>, state: usize, action: usize) -> f64 {
    let k = ctx.n_obs;
    let v = ctx.propagate(&ctx.select(r));
    r[action * k + state] + ctx.gamma * ctx.p_hat[action].row(state).transpose().dot(&v)
}

/// Strict and equivalence preference rows over the latent reward.
#[derive(Debug, Clone)]
pub struct EdgeSystem {
    /// `E × n̂m`; strict rows first, then equivalence rows.
    pub rows: DMatrix<f64>,
    pub n_strict: usize,
    /// `(observed state, preferred action, other action)` per row.
    pub labels: Vec<(usize, usize, usize)>,
}

impl EdgeSystem {
    pub fn new(ctx: &LatentQContext, obs: &ObservationSet) -> Self {
        let mut labels = Vec::new();
        for (i, g) in obs.graphs().iter().enumerate() {
            labels.extend(g.strict_action_edges().map(|(u, v)| (i, u, v)));
        }
        let n_strict = labels.len();
        for (i, g) in obs.graphs().iter().enumerate() {
            labels.extend(g.equiv_action_edges().map(|(u, v)| (i, u, v)));
        }
        let mut rows = DMatrix::zeros(labels.len(), ctx.dim());
        for (e, &(i, u, v)) in labels.iter().enumerate() {
            rows.set_row(e, &ctx.difference_row(i, u, v).transpose());
        }
        EdgeSystem { rows, n_strict, labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_equiv(&self) -> usize {
        self.labels.len() - self.n_strict
    }

    /// `ρ`: the equivalence row `k`, so that `−½(ρ·r)²` is its log-likelihood.
    pub fn rho(&self, k: usize) -> DVector<f64> {
        self.rows.row(self.n_strict + k).transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> LatentQContext {
        let p0 = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.2, 0.8]);
        let p1 = DMatrix::from_row_slice(2, 2, &[0.3, 0.7, 0.6, 0.4]);
        LatentQContext::from_blocks(vec![p0, p1], vec![1, 0], 0.5).unwrap()
    }

    #[test]
    fn zero_discount_and_zero_reward() {
        let p = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let ctx = LatentQContext::from_blocks(vec![p.clone(), p], vec![0, 1], 0.0).unwrap();
        let r = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        for i in 0..2 {
            for a in 0..2 {
                assert_eq!(latent_q(&ctx, &r, i, a), r[a * 2 + i]);
            }
        }
        assert_eq!(latent_q(&toy(), &DVector::zeros(4), 1, 1), 0.0);
    }

    #[test]
    fn matches_explicit_inverse() {
        let ctx = toy();
        let r = DVector::from_vec(vec![0.3, -1.2, 0.7, 0.25]);
        let sel = ctx.selector();
        let mut p_star = DMatrix::zeros(2, 2);
        p_star.set_row(0, &ctx.block(1).row(0));
        p_star.set_row(1, &ctx.block(0).row(1));
        let inv = (DMatrix::identity(2, 2) - p_star * 0.5).try_inverse().unwrap();
        let q = ctx.q_values(&r);
        for i in 0..2 {
            for a in 0..2 {
                let want = r[a * 2 + i] + 0.5 * (ctx.block(a).row(i) * &inv * &sel * &r)[0];
                assert!((latent_q(&ctx, &r, i, a) - want).abs() < 1e-14);
                assert!((ctx.q_row(i, a).dot(&r) - want).abs() < 1e-14);
                assert!((q[(i, a)] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn selector_has_one_entry_per_row() {
        let sel = toy().selector();
        for i in 0..2 {
            assert_eq!(sel.row(i).sum(), 1.0);
            assert_eq!(sel.row(i).iter().filter(|&&x| x == 1.0).count(), 1);
        }
    }

    #[test]
    fn rejects_non_stochastic_blocks() {
        let bad = DMatrix::from_row_slice(1, 1, &[0.9]);
        assert!(LatentQContext::from_blocks(vec![bad], vec![0], 0.5).is_err());
    }
}
