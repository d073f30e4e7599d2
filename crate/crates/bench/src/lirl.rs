//! Linear-programming IRL baseline.
//!
//! ```text
//! max  Σ_s t_s − λ Σ_j u_j
//! s.t. t_s ≤ G_sa·r       for every constraint row (s, a)
//!      G_sa·r ≥ 0
//!      −u ≤ r ≤ u,  u ≤ r_max
//! ```
//!
//! `t_s` is the smallest optimality margin at state `s` and `u` bounds `|r|`,
//! so the program trades margins against an ℓ₁ penalty. It is solved with the
//! shared log-barrier method; `t` and `u` enter the Newton system through
//! diagonal blocks and are eliminated, leaving an `n × n` solve.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use irl_core::cpirl::{complete_partial_policy, observed_constraints, ConstraintSet};
use irl_core::linalg::{cholesky_spd, weighted_gram};
use irl_core::qp::{barrier_solve, phase_one, BarrierOptions, BarrierProgram};
use irl_core::{DecisionMap, IrlError, Mdp, Policy, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LirlSettings {
    pub lambda: f64,
    pub r_max: f64,
}

impl Default for LirlSettings {
    fn default() -> Self {
        LirlSettings { lambda: 1.0, r_max: 1.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LirlSolution {
    pub reward: Vec<f64>,
    /// `Σ t − λ‖r‖₁` at the returned point.
    pub objective: f64,
    pub iterations: usize,
}

/// Variables are stacked `(r, t, u)`; slacks `(A, B, C, D, E)` with
/// `A_i = G_i r − t_{s(i)}`, `B_i = G_i r`, `C_j = u_j − r_j`, `D_j = u_j + r_j`,
/// `E_j = r_max − u_j`.
struct LirlProgram<'a> {
    g: &'a DMatrix<f64>,
    /// Margin variable index of each constraint row.
    group: Vec<usize>,
    n_groups: usize,
    lambda: f64,
    r_max: f64,
    /// `G r ≥ −floor`; nonzero only when `G r ≥ 0` has no interior.
    floor: f64,
}

impl LirlProgram<'_> {
    fn n(&self) -> usize {
        self.g.ncols()
    }

    fn rows(&self) -> usize {
        self.g.nrows()
    }

    fn split<'v>(&self, x: &'v DVector<f64>) -> (nalgebra::DVectorView<'v, f64>, nalgebra::DVectorView<'v, f64>, nalgebra::DVectorView<'v, f64>) {
        let (n, k) = (self.n(), self.n_groups);
        (x.rows(0, n), x.rows(n, k), x.rows(n + k, n))
    }
}

impl BarrierProgram for LirlProgram<'_> {
    fn dim(&self) -> usize {
        2 * self.n() + self.n_groups
    }

    fn objective(&self, x: &DVector<f64>) -> f64 {
        let (_, t, u) = self.split(x);
        -t.sum() + self.lambda * u.sum()
    }

    fn slacks(&self, x: &DVector<f64>) -> DVector<f64> {
        let (r, t, u) = self.split(x);
        let (n, e) = (self.n(), self.rows());
        let gr = self.g * r;
        let mut s = DVector::zeros(2 * e + 3 * n);
        for i in 0..e {
            s[i] = gr[i] - t[self.group[i]];
            s[e + i] = gr[i] + self.floor;
        }
        for j in 0..n {
            s[2 * e + j] = u[j] - r[j];
            s[2 * e + n + j] = u[j] + r[j];
            s[2 * e + 2 * n + j] = self.r_max - u[j];
        }
        s
    }

    fn barrier_gradient(&self, _x: &DVector<f64>, s: &DVector<f64>, t: f64) -> DVector<f64> {
        let (n, e, k) = (self.n(), self.rows(), self.n_groups);
        let inv = s.map(|v| 1.0 / v);
        // Each term −log s contributes −∇s/s.
        let mut row_weight = DVector::zeros(e);
        let mut grad = DVector::zeros(2 * n + k);
        for i in 0..e {
            row_weight[i] = inv[i] + inv[e + i];
            grad[n + self.group[i]] += inv[i];
        }
        let gr = self.g.transpose() * row_weight;
        for j in 0..n {
            let (c, d, eb) = (inv[2 * e + j], inv[2 * e + n + j], inv[2 * e + 2 * n + j]);
            grad[j] = -gr[j] + c - d;
            grad[n + k + j] = t * self.lambda - c - d + eb;
        }
        for g in 0..k {
            grad[n + g] -= t;
        }
        grad
    }

    fn newton_direction(&self, _x: &DVector<f64>, s: &DVector<f64>, _t: f64, grad: &DVector<f64>) -> Option<DVector<f64>> {
        let (n, e, k) = (self.n(), self.rows(), self.n_groups);
        let w = s.map(|v| 1.0 / (v * v));
        let (wa, wb) = (w.rows(0, e), w.rows(e, e));
        let (wc, wd, we) = (w.rows(2 * e, n), w.rows(2 * e + n, n), w.rows(2 * e + 2 * n, n));
        // H_rr = Gᵀ diag(wa + wb) G + diag(wc + wd);  H_rt = −Gᵀ diag(wa) S;
        // H_tt = diag(Sᵀ wa);  H_ru = diag(wd − wc);  H_uu = diag(wc + wd + we).
        let mut h = weighted_gram(self.g, &(wa + wb));
        let mut tau = DVector::zeros(k);
        let mut v = DMatrix::zeros(n, k);
        for i in 0..e {
            tau[self.group[i]] += wa[i];
            v.column_mut(self.group[i]).axpy(wa[i], &self.g.row(i).transpose(), 1.0);
        }
        let h_uu = DVector::from_fn(n, |j, _| wc[j] + wd[j] + we[j]);
        let h_ru = DVector::from_fn(n, |j, _| wd[j] - wc[j]);
        for j in 0..n {
            h[(j, j)] += wc[j] + wd[j] - h_ru[j] * h_ru[j] / h_uu[j];
        }
        // H_rt H_tt⁻¹ H_tr = Σ_s v_s v_sᵀ / τ_s with v_s = Gᵀ restricted to s, weighted.
        let mut v_scaled = v.clone();
        for g in 0..k {
            v_scaled.column_mut(g).unscale_mut(tau[g]);
        }
        h -= &v_scaled * v.transpose();
        let (g_r, g_t, g_u) = (grad.rows(0, n), grad.rows(n, k), grad.rows(n + k, n));
        // H_rt = −V, so −H_rt H_tt⁻¹ g_t = V (g_t/τ).
        let mut rhs = -g_r.into_owned();
        rhs -= &v * g_t.component_div(&tau);
        rhs += DVector::from_fn(n, |j, _| h_ru[j] * g_u[j] / h_uu[j]);
        let dr = cholesky_spd((&h + h.transpose()) * 0.5)?.solve(&rhs);
        let vt_dr = v.transpose() * &dr;
        let mut dx = DVector::zeros(2 * n + k);
        dx.rows_mut(0, n).copy_from(&dr);
        for g in 0..k {
            // H_tr dr = −Vᵀ dr.
            dx[n + g] = (-g_t[g] + vt_dr[g]) / tau[g];
        }
        for j in 0..n {
            dx[n + k + j] = (-g_u[j] - h_ru[j] * dr[j]) / h_uu[j];
        }
        Some(dx)
    }
}

/// Phase-1 violation below which a missing interior is treated as a tie.
const EMPTY_INTERIOR_TOL: f64 = 1e-6;

fn group_minima(values: &DVector<f64>, group: &[usize], k: usize) -> Vec<f64> {
    let mut out = vec![f64::INFINITY; k];
    for (i, &grp) in group.iter().enumerate() {
        out[grp] = out[grp].min(values[i]);
    }
    out
}

/// Solve the LP over explicit constraint rows grouped by state.
pub fn solve_lirl(constraints: &ConstraintSet, settings: &LirlSettings) -> Result<LirlSolution> {
    let g = &constraints.matrix;
    let n = g.ncols();
    if !(settings.r_max > 0.0) || settings.lambda < 0.0 {
        return Err(IrlError::Invalid("LIRL needs r_max > 0 and lambda >= 0".into()));
    }
    let mut states: Vec<usize> = constraints.labels.iter().map(|&(s, _)| s).collect();
    states.sort_unstable();
    states.dedup();
    let group: Vec<usize> = constraints.labels.iter().map(|(s, _)| states.binary_search(s).unwrap()).collect();
    let k = states.len();
    let lo = DVector::from_element(n, -settings.r_max);
    let hi = DVector::from_element(n, settings.r_max);
    // When no reward makes the observed actions strictly optimal the cone
    // `G r ≥ 0` has no interior; relax it by a hair so the barrier can start.
    let (r0, floor) = match phase_one(g, 0.0, &lo, &hi, -1e-4 * settings.r_max) {
        Ok(r0) => (r0, 0.0),
        Err(IrlError::Infeasible { max_violation, .. }) if max_violation < EMPTY_INTERIOR_TOL => {
            let floor = EMPTY_INTERIOR_TOL * settings.r_max;
            (phase_one(g, -floor, &lo, &hi, -0.5 * floor)?, floor)
        }
        Err(e) => return Err(e),
    };
    let gr = g * &r0;
    let mut x0 = DVector::zeros(2 * n + k);
    x0.rows_mut(0, n).copy_from(&r0);
    for (grp, m) in group_minima(&gr, &group, k).iter().enumerate() {
        x0[n + grp] = m - 1.0;
    }
    for j in 0..n {
        x0[n + k + j] = 0.5 * (r0[j].abs() + settings.r_max);
    }
    let program = LirlProgram { g, group, n_groups: k, lambda: settings.lambda, r_max: settings.r_max, floor };
    let out = barrier_solve(&program, x0, &BarrierOptions::default(), None)?;
    let r = out.x.rows(0, n).into_owned();
    let margins = group_minima(&(g * &r), &program.group, k);
    let objective = margins.iter().sum::<f64>() - settings.lambda * r.iter().map(|v| v.abs()).sum::<f64>();
    Ok(LirlSolution { reward: r.as_slice().to_vec(), objective, iterations: out.newton_iterations })
}

/// LIRL for a complete policy.
pub fn lirl_baseline(mdp: &Mdp, policy: &Policy, settings: &LirlSettings) -> Result<LirlSolution> {
    policy.check(mdp)?;
    let pairs = policy.actions().iter().copied().enumerate().collect();
    lirl_from_observations(mdp, &DecisionMap::new(pairs), settings)
}

/// LIRL for partial observations: the policy is completed as for the MAP QP
/// and only observed states contribute rows.
pub fn lirl_from_observations(mdp: &Mdp, obs: &DecisionMap, settings: &LirlSettings) -> Result<LirlSolution> {
    let completed = complete_partial_policy(mdp, obs)?;
    let constraints = observed_constraints(mdp, &completed)?;
    solve_lirl(&constraints, settings)
}
