//! MAP reward estimation under a Gaussian prior, constrained to rewards that
//! make the observed policy optimal.
//!
//! With `r ~ N(μ, Σ)` and an indicator likelihood, the posterior is the
//! prior truncated to the polytope `{r : G r ≥ ε, r_min ≤ r ≤ r_max}`, so
//! its mode solves the QP `min ½(r − μ)ᵀ Σ⁻¹ (r − μ)` over that polytope.

use nalgebra::{linalg::Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{IrlError, Result};
use crate::mdp::{constraint_operator_from, Mdp, Policy};
use crate::observations::DecisionMap;
use crate::qp::{barrier_solve, phase_one, BarrierOptions, DenseQp, KktReport};

pub const DEFAULT_MARGIN: f64 = 1e-3;
/// Constraint rows with every entry below this are ties and are dropped.
pub const ZERO_ROW_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct GaussianPrior {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    factor: Cholesky<f64, Dyn>,
}

impl GaussianPrior {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if covariance.nrows() != n || covariance.ncols() != n {
            return Err(IrlError::Dimension(format!("prior covariance must be {n}x{n}")));
        }
        let asym = (&covariance - covariance.transpose()).amax();
        if asym > 1e-12 {
            return Err(IrlError::Invalid(format!("prior covariance is not symmetric (max asymmetry {asym:e})")));
        }
        let factor = Cholesky::new(covariance.clone())
            .ok_or_else(|| IrlError::Invalid("prior covariance is not positive definite".into()))?;
        Ok(GaussianPrior { mean, covariance, factor })
    }

    /// `N(0, I)`.
    pub fn standard(n: usize) -> Self {
        GaussianPrior::new(DVector::zeros(n), DMatrix::identity(n, n)).expect("identity is SPD")
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `Σ⁻¹`, from the cached factor.
    pub fn precision(&self) -> DMatrix<f64> {
        self.factor.inverse()
    }

    /// `½(r − μ)ᵀ Σ⁻¹ (r − μ)`.
    pub fn energy(&self, r: &DVector<f64>) -> f64 {
        let d = r - &self.mean;
        0.5 * d.dot(&self.factor.solve(&d))
    }
}

/// Where the completed policy's transition row at a state comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Choice {
    Action(usize),
    /// Uniform average of all action rows.
    Averaged,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletedPolicy {
    pub choices: Vec<Choice>,
}

impl CompletedPolicy {
    /// The policy as plain actions, if every state was observed.
    pub fn as_policy(&self) -> Option<Policy> {
        self.choices
            .iter()
            .map(|c| match c {
                Choice::Action(a) => Some(*a),
                Choice::Averaged => None,
            })
            .collect::<Option<Vec<_>>>()
            .map(Policy)
    }

    pub fn observed_states(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.choices.iter().enumerate().filter_map(|(s, c)| match c {
            Choice::Action(a) => Some((s, *a)),
            Choice::Averaged => None,
        })
    }

    /// `P_π` with averaged rows at unobserved states.
    pub fn transition(&self, mdp: &Mdp) -> DMatrix<f64> {
        let n = mdp.n_states();
        let mut p = DMatrix::zeros(n, n);
        for (s, c) in self.choices.iter().enumerate() {
            match c {
                Choice::Action(a) => p.set_row(s, &mdp.transition(*a).row(s)),
                Choice::Averaged => p.set_row(s, &mdp.averaged_row(s)),
            }
        }
        p
    }
}

/// Fill in a policy from observations. Observed states keep their most
/// frequently observed action (lowest index on ties); the rest average.
pub fn complete_partial_policy(mdp: &Mdp, partial: &DecisionMap) -> Result<CompletedPolicy> {
    if partial.is_empty() {
        return Err(IrlError::Invalid("no observed states".into()));
    }
    partial.check(mdp)?;
    let (n, m) = (mdp.n_states(), mdp.n_actions());
    let mut counts = vec![0usize; n * m];
    for &(s, a) in &partial.pairs {
        counts[s * m + a] += 1;
    }
    let choices = (0..n)
        .map(|s| {
            let row = &counts[s * m..(s + 1) * m];
            let best = (0..m).fold(0, |b, a| if row[a] > row[b] { a } else { b });
            if row[best] == 0 {
                Choice::Averaged
            } else {
                Choice::Action(best)
            }
        })
        .collect();
    Ok(CompletedPolicy { choices })
}

/// Rows of `G` that constrain the reward: one per observed state `s` and
/// alternative action `a ≠ π(s)` whose row is not identically zero.
#[derive(Debug, Clone)]
pub struct ConstraintSet {
    pub matrix: DMatrix<f64>,
    /// `(state, alternative action)` for each row.
    pub labels: Vec<(usize, usize)>,
}

pub fn observed_constraints(mdp: &Mdp, policy: &CompletedPolicy) -> Result<ConstraintSet> {
    let n = mdp.n_states();
    let g = constraint_operator_from(mdp, &policy.transition(mdp))?;
    let mut labels = Vec::new();
    for (s, pi_s) in policy.observed_states() {
        for a in (0..mdp.n_actions()).filter(|&a| a != pi_s) {
            if g.row(a * n + s).amax() >= ZERO_ROW_TOL {
                labels.push((s, a));
            }
        }
    }
    let mut matrix = DMatrix::zeros(labels.len(), n);
    for (i, &(s, a)) in labels.iter().enumerate() {
        matrix.set_row(i, &g.row(a * n + s));
    }
    Ok(ConstraintSet { matrix, labels })
}

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub constraint_matrix: DMatrix<f64>,
    pub margin: f64,
    pub r_min: DVector<f64>,
    pub r_max: DVector<f64>,
}

impl QpProblem {
    pub fn new(constraint_matrix: DMatrix<f64>, margin: f64, r_min: DVector<f64>, r_max: DVector<f64>) -> Result<Self> {
        let n = constraint_matrix.ncols();
        if r_min.len() != n || r_max.len() != n {
            return Err(IrlError::Dimension(format!("bounds must have length {n}")));
        }
        if !(margin > 0.0) {
            return Err(IrlError::Invalid("margin must be positive".into()));
        }
        if r_min.iter().zip(r_max.iter()).any(|(lo, hi)| !(lo < hi)) {
            return Err(IrlError::Invalid("r_min must be below r_max elementwise".into()));
        }
        Ok(QpProblem { constraint_matrix, margin, r_min, r_max })
    }

    /// Uniform box `[lo, hi]ⁿ`.
    pub fn with_box(constraint_matrix: DMatrix<f64>, margin: f64, lo: f64, hi: f64) -> Result<Self> {
        let n = constraint_matrix.ncols();
        QpProblem::new(constraint_matrix, margin, DVector::from_element(n, lo), DVector::from_element(n, hi))
    }

    pub fn dim(&self) -> usize {
        self.constraint_matrix.ncols()
    }

    fn as_dense(&self, prior: &GaussianPrior) -> DenseQp {
        let precision = prior.precision();
        let linear = -(&precision * prior.mean());
        DenseQp {
            hessian: Some(precision),
            linear,
            rows: -&self.constraint_matrix,
            rhs: DVector::from_element(self.constraint_matrix.nrows(), -self.margin),
            lower: self.r_min.clone(),
            upper: self.r_max.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CpirlSolution {
    pub reward: Vec<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
}

/// Solution together with its per-condition KKT residuals.
#[derive(Debug, Clone)]
pub struct CpirlReport {
    pub solution: CpirlSolution,
    pub kkt: KktReport,
    /// Multipliers in the order: constraint rows, lower bounds, upper bounds.
    pub multipliers: DVector<f64>,
}

pub fn solve_map_qp(problem: &QpProblem, prior: &GaussianPrior) -> Result<CpirlSolution> {
    solve_map_qp_report(problem, prior).map(|r| r.solution)
}

pub fn solve_map_qp_report(problem: &QpProblem, prior: &GaussianPrior) -> Result<CpirlReport> {
    if prior.dim() != problem.dim() {
        return Err(IrlError::Dimension(format!("prior has dimension {}, problem {}", prior.dim(), problem.dim())));
    }
    let start = phase_one(&problem.constraint_matrix, problem.margin, &problem.r_min, &problem.r_max, -problem.margin / 2.0)?;
    let qp = problem.as_dense(prior);
    let out = barrier_solve(&qp, start, &BarrierOptions::default(), None)?;
    let kkt = qp.kkt(&out.x, &out.multipliers);
    let solution = CpirlSolution {
        objective: prior.energy(&out.x),
        reward: out.x.as_slice().to_vec(),
        kkt_residual: kkt.max(),
        iterations: out.newton_iterations,
    };
    Ok(CpirlReport { solution, kkt, multipliers: out.multipliers })
}

/// Margin and reward box for the end-to-end pipeline.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CpirlSettings {
    pub margin: f64,
    pub r_min: f64,
    pub r_max: f64,
}

impl Default for CpirlSettings {
    fn default() -> Self {
        CpirlSettings { margin: DEFAULT_MARGIN, r_min: -1.0, r_max: 1.0 }
    }
}

/// Observations → completed policy → constraint rows → MAP QP.
pub fn posterior_mode_demo(mdp: &Mdp, observations: &DecisionMap, prior: &GaussianPrior) -> Result<CpirlSolution> {
    posterior_mode(mdp, observations, prior, &CpirlSettings::default())
}

pub fn posterior_mode(mdp: &Mdp, observations: &DecisionMap, prior: &GaussianPrior, settings: &CpirlSettings) -> Result<CpirlSolution> {
    let policy = complete_partial_policy(mdp, observations)?;
    let constraints = observed_constraints(mdp, &policy)?;
    let problem = QpProblem::with_box(constraints.matrix, settings.margin, settings.r_min, settings.r_max)?;
    solve_map_qp(&problem, prior)
}
