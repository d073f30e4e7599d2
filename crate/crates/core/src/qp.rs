//! Primal log-barrier interior-point method.
//!
//! A [`BarrierProgram`] supplies the objective, the constraint slacks and the
//! Newton system of `t·f₀(x) − Σ log sᵢ(x)`; [`barrier_solve`] follows the
//! central path, multiplying `t` by [`BarrierOptions::mu`] after each
//! centering. [`DenseQp`] is the dense convex-quadratic instance used for MAP
//! estimation and for phase-1 feasibility searches.

use nalgebra::{DMatrix, DVector};

use crate::error::{IrlError, Result};
use crate::linalg::{cholesky_spd, inf_norm, weighted_gram};

#[derive(Debug, Clone, Copy)]
pub struct BarrierOptions {
    pub t0: f64,
    /// Barrier reduction factor.
    pub mu: f64,
    /// Stop once `1/t` (the complementarity per constraint) falls below this.
    pub final_complementarity: f64,
    pub max_newton_per_stage: usize,
    pub max_newton_total: usize,
}

impl Default for BarrierOptions {
    fn default() -> Self {
        BarrierOptions { t0: 1.0, mu: 10.0, final_complementarity: 1e-8, max_newton_per_stage: 200, max_newton_total: 5000 }
    }
}

pub trait BarrierProgram {
    fn dim(&self) -> usize;
    fn objective(&self, x: &DVector<f64>) -> f64;
    /// Slacks of every inequality; `x` is interior iff all are positive.
    fn slacks(&self, x: &DVector<f64>) -> DVector<f64>;
    /// Gradient of `t·f₀ − Σ log s` at `x` with slacks `s`.
    fn barrier_gradient(&self, x: &DVector<f64>, s: &DVector<f64>, t: f64) -> DVector<f64>;
    /// Solve `∇²(t·f₀ − Σ log s) · dx = −grad`.
    fn newton_direction(&self, x: &DVector<f64>, s: &DVector<f64>, t: f64, grad: &DVector<f64>) -> Option<DVector<f64>>;
}

#[derive(Debug, Clone)]
pub struct BarrierOutcome {
    pub x: DVector<f64>,
    /// Dual estimates `1/(t·sᵢ)`, in slack order.
    pub multipliers: DVector<f64>,
    pub t: f64,
    pub newton_iterations: usize,
    /// True when `stop` ended the solve before the final barrier stage.
    pub stopped_early: bool,
}

fn barrier_value<P: BarrierProgram + ?Sized>(prog: &P, x: &DVector<f64>, t: f64) -> Option<f64> {
    let s = prog.slacks(x);
    if s.iter().any(|&v| !(v > 0.0)) {
        return None;
    }
    Some(t * prog.objective(x) - s.iter().map(|v| v.ln()).sum::<f64>())
}

/// Follow the central path from the strictly interior `x0`. `stop` is checked
/// after every Newton step and may end the solve early.
pub fn barrier_solve<P: BarrierProgram + ?Sized>(
    prog: &P,
    x0: DVector<f64>,
    opts: &BarrierOptions,
    stop: Option<&dyn Fn(&DVector<f64>) -> bool>,
) -> Result<BarrierOutcome> {
    let mut x = x0;
    if barrier_value(prog, &x, 1.0).is_none() {
        return Err(IrlError::Invalid("barrier start point is not strictly interior".into()));
    }
    let mut t = opts.t0;
    let mut total = 0;
    loop {
        let final_stage = 1.0 / t <= opts.final_complementarity;
        let mut stage_iters = 0;
        let mut last_pure: Option<f64> = None;
        loop {
            let s = prog.slacks(&x);
            let g = prog.barrier_gradient(&x, &s, t);
            if inf_norm(&g) <= 1e-9 * t.max(1.0) {
                break;
            }
            let dx = prog.newton_direction(&x, &s, t, &g).ok_or_else(|| IrlError::Numerical {
                reason: "barrier Newton system is not positive definite".into(),
                best: Some(x.iter().copied().collect()),
            })?;
            let decrement_sq = -g.dot(&dx);
            if decrement_sq.is_nan() {
                return Err(IrlError::Numerical { reason: "NaN Newton decrement".into(), best: Some(x.as_slice().to_vec()) });
            }
            if decrement_sq / 2.0 <= 1e-16 {
                break;
            }
            let mut accepted = false;
            let pure = decrement_sq < 0.25 && barrier_value(prog, &(&x + &dx), t).is_some();
            if pure {
                // Full steps converge quadratically here; a decrement that stops
                // shrinking means rounding has taken over.
                if last_pure.is_some_and(|prev| decrement_sq >= prev) {
                    break;
                }
                last_pure = Some(decrement_sq);
                x += &dx;
                accepted = true;
            } else {
                let phi = barrier_value(prog, &x, t).expect("iterate stays interior");
                let mut step = 1.0;
                for _ in 0..60 {
                    let trial = &x + &dx * step;
                    if let Some(v) = barrier_value(prog, &trial, t) {
                        if v <= phi - 0.01 * step * decrement_sq {
                            accepted = v < phi;
                            x = trial;
                            break;
                        }
                    }
                    step *= 0.5;
                }
            }
            total += 1;
            stage_iters += 1;
            if let Some(stop) = stop {
                if stop(&x) {
                    let s = prog.slacks(&x);
                    return Ok(BarrierOutcome {
                        multipliers: s.map(|v| 1.0 / (t * v)),
                        x,
                        t,
                        newton_iterations: total,
                        stopped_early: true,
                    });
                }
            }
            // No representable decrease: centered to working precision.
            if !accepted {
                break;
            }
            if stage_iters >= opts.max_newton_per_stage || total >= opts.max_newton_total {
                return Err(IrlError::Numerical {
                    reason: format!("barrier iteration cap exceeded after {total} Newton steps"),
                    best: Some(x.as_slice().to_vec()),
                });
            }
        }
        if final_stage {
            break;
        }
        t *= opts.mu;
    }
    let s = prog.slacks(&x);
    Ok(BarrierOutcome { multipliers: s.map(|v| 1.0 / (t * v)), x, t, newton_iterations: total, stopped_early: false })
}

/// `min ½xᵀHx + cᵀx  s.t.  A x ≤ b,  lower ≤ x ≤ upper` with dense `A`.
/// Infinite bounds are ignored.
#[derive(Debug, Clone)]
pub struct DenseQp {
    pub hessian: Option<DMatrix<f64>>,
    pub linear: DVector<f64>,
    pub rows: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl DenseQp {
    fn n(&self) -> usize {
        self.linear.len()
    }

    fn finite_lower(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n()).filter(|&i| self.lower[i].is_finite())
    }

    fn finite_upper(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n()).filter(|&i| self.upper[i].is_finite())
    }

    /// Split a slack-ordered vector into (rows, lower, upper) parts as dense
    /// per-variable vectors (zeros where a bound is infinite).
    fn split(&self, v: &DVector<f64>) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let k = self.rows.nrows();
        let rows = v.rows(0, k).into_owned();
        let mut lo = DVector::zeros(self.n());
        let mut hi = DVector::zeros(self.n());
        let mut idx = k;
        for i in self.finite_lower() {
            lo[i] = v[idx];
            idx += 1;
        }
        for i in self.finite_upper() {
            hi[i] = v[idx];
            idx += 1;
        }
        (rows, lo, hi)
    }

    pub fn objective_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.hessian {
            Some(h) => h * x + &self.linear,
            None => self.linear.clone(),
        }
    }

    /// KKT residuals at `x` with slack-ordered multipliers.
    pub fn kkt(&self, x: &DVector<f64>, multipliers: &DVector<f64>) -> KktReport {
        let s = self.slacks(x);
        let (lr, ll, lu) = self.split(multipliers);
        let stationarity = self.objective_gradient(x) + self.rows.transpose() * &lr - ll + lu;
        let primal = s.iter().fold(0.0_f64, |acc, &v| acc.max(-v));
        let dual = multipliers.iter().fold(0.0_f64, |acc, &v| acc.max(-v));
        let complementarity = s.iter().zip(multipliers.iter()).fold(0.0_f64, |acc, (a, b)| acc.max((a * b).abs()));
        KktReport { stationarity: inf_norm(&stationarity), primal, dual, complementarity }
    }
}

impl BarrierProgram for DenseQp {
    fn dim(&self) -> usize {
        self.n()
    }

    fn objective(&self, x: &DVector<f64>) -> f64 {
        let quad = self.hessian.as_ref().map_or(0.0, |h| 0.5 * x.dot(&(h * x)));
        quad + self.linear.dot(x)
    }

    fn slacks(&self, x: &DVector<f64>) -> DVector<f64> {
        let row_slack = &self.rhs - &self.rows * x;
        let lo = self.finite_lower().map(|i| x[i] - self.lower[i]);
        let hi = self.finite_upper().map(|i| self.upper[i] - x[i]);
        DVector::from_iterator(
            row_slack.len() + self.finite_lower().count() + self.finite_upper().count(),
            row_slack.iter().copied().chain(lo).chain(hi),
        )
    }

    fn barrier_gradient(&self, x: &DVector<f64>, s: &DVector<f64>, t: f64) -> DVector<f64> {
        let inv = s.map(|v| 1.0 / v);
        let (ir, il, iu) = self.split(&inv);
        self.objective_gradient(x) * t + self.rows.transpose() * ir - il + iu
    }

    fn newton_direction(&self, _x: &DVector<f64>, s: &DVector<f64>, t: f64, grad: &DVector<f64>) -> Option<DVector<f64>> {
        let inv_sq = s.map(|v| 1.0 / (v * v));
        let (wr, wl, wu) = self.split(&inv_sq);
        let mut h = if self.rows.nrows() > 0 { weighted_gram(&self.rows, &wr) } else { DMatrix::zeros(self.n(), self.n()) };
        if let Some(q) = &self.hessian {
            h += q * t;
        }
        for i in 0..self.n() {
            h[(i, i)] += wl[i] + wu[i];
        }
        let chol = cholesky_spd(h)?;
        Some(chol.solve(&(-grad)))
    }
}

/// Infinity-norm KKT residuals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktReport {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.dual).max(self.complementarity)
    }
}

/// Phase 1: find `x` strictly inside `lower < x < upper` with `G x > margin`
/// by minimizing the largest violation `s = maxᵢ (margin − Gᵢ x)`.
///
/// Stops as soon as `s ≤ target`. If the full phase-1 solve ends with `s ≥ 0`
/// no strictly feasible point exists and [`IrlError::Infeasible`] is returned.
pub fn phase_one(
    g: &DMatrix<f64>,
    margin: f64,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    target: f64,
) -> Result<DVector<f64>> {
    let n = g.ncols();
    let x0 = DVector::from_fn(n, |i, _| match (lower[i].is_finite(), upper[i].is_finite()) {
        (true, true) => 0.5 * (lower[i] + upper[i]),
        (true, false) => lower[i] + 1.0,
        (false, true) => upper[i] - 1.0,
        (false, false) => 0.0,
    });
    if g.nrows() == 0 {
        return Ok(x0);
    }
    let violation = |x: &DVector<f64>| (0..g.nrows()).map(|i| margin - g.row(i).dot(&x.transpose())).fold(f64::NEG_INFINITY, f64::max);
    let v0 = violation(&x0);
    if v0 <= target {
        return Ok(x0);
    }
    let k = g.nrows();
    // Variables (x, s); rows  −G x − s ≤ −margin.
    let mut rows = DMatrix::zeros(k, n + 1);
    rows.view_mut((0, 0), (k, n)).copy_from(&(-g));
    rows.column_mut(n).fill(-1.0);
    let mut linear = DVector::zeros(n + 1);
    linear[n] = 1.0;
    let mut lo = DVector::from_element(n + 1, f64::NEG_INFINITY);
    let mut hi = DVector::from_element(n + 1, f64::INFINITY);
    lo.rows_mut(0, n).copy_from(lower);
    hi.rows_mut(0, n).copy_from(upper);
    let qp = DenseQp { hessian: None, linear, rows, rhs: DVector::from_element(k, -margin), lower: lo, upper: hi };
    let mut start = DVector::zeros(n + 1);
    start.rows_mut(0, n).copy_from(&x0);
    start[n] = v0 + 1.0;
    let stop = |z: &DVector<f64>| z[n] <= target;
    let out = barrier_solve(&qp, start, &BarrierOptions::default(), Some(&stop))?;
    let x = out.x.rows(0, n).into_owned();
    let achieved = violation(&x);
    if achieved < 0.0 {
        Ok(x)
    } else {
        Err(IrlError::Infeasible {
            max_violation: achieved,
            point: x.as_slice().to_vec(),
            multipliers: out.multipliers.rows(0, k).iter().copied().collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_constrained_projection() {
        // min ½‖x − (2, −3)‖² over [−1, 1]²  →  (1, −1).
        let qp = DenseQp {
            hessian: Some(DMatrix::identity(2, 2)),
            linear: DVector::from_vec(vec![-2.0, 3.0]),
            rows: DMatrix::zeros(0, 2),
            rhs: DVector::zeros(0),
            lower: DVector::from_element(2, -1.0),
            upper: DVector::from_element(2, 1.0),
        };
        let out = barrier_solve(&qp, DVector::zeros(2), &BarrierOptions::default(), None).unwrap();
        assert!((out.x[0] - 1.0).abs() < 1e-8 && (out.x[1] + 1.0).abs() < 1e-8);
        assert!(qp.kkt(&out.x, &out.multipliers).max() < 1e-6);
    }

    #[test]
    fn linear_program_vertex() {
        // max x + y  s.t. x + 2y ≤ 4, 3x + y ≤ 6, x, y ≥ 0  →  (1.6, 1.2).
        let qp = DenseQp {
            hessian: None,
            linear: DVector::from_vec(vec![-1.0, -1.0]),
            rows: DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 1.0]),
            rhs: DVector::from_vec(vec![4.0, 6.0]),
            lower: DVector::zeros(2),
            upper: DVector::from_element(2, f64::INFINITY),
        };
        let out = barrier_solve(&qp, DVector::from_vec(vec![0.5, 0.5]), &BarrierOptions::default(), None).unwrap();
        assert!((out.x[0] - 1.6).abs() < 1e-7 && (out.x[1] - 1.2).abs() < 1e-7);
    }

    #[test]
    fn rejects_exterior_start() {
        let qp = DenseQp {
            hessian: None,
            linear: DVector::from_vec(vec![1.0]),
            rows: DMatrix::zeros(0, 1),
            rhs: DVector::zeros(0),
            lower: DVector::from_element(1, 0.0),
            upper: DVector::from_element(1, 1.0),
        };
        assert!(barrier_solve(&qp, DVector::from_element(1, 2.0), &BarrierOptions::default(), None).is_err());
    }

    #[test]
    fn phase_one_finds_strict_point_or_certifies() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let lo = DVector::from_element(2, -1.0);
        let hi = DVector::from_element(2, 1.0);
        let x = phase_one(&g, 0.5, &lo, &hi, -0.25).unwrap();
        assert!(x[0] > 0.5 && x[1] > 0.5 && x.amax() < 1.0);
        // x₁ ≥ 0.5 and −x₁ ≥ 0.5 cannot both hold.
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]);
        match phase_one(&g, 0.5, &lo, &hi, -0.25) {
            Err(IrlError::Infeasible { max_violation, .. }) => assert!(max_violation > 0.4),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }
}
