//! Finite Markov decision processes and exact dynamic-programming solvers.
//!
//! States and actions are dense indices. Transition matrices are stored one
//! per action, row `s` of `P_a` being the successor distribution after taking
//! `a` in `s`. Rewards come in two regimes: state-only (length `n`) and
//! state-action (length `n·m`, laid out action-major: entry `a·n + s`).

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::error::{IrlError, Result};
use crate::linalg::{discounted_system, inf_norm};

/// Row sums must match one within this tolerance.
pub const STOCHASTIC_TOL: f64 = 1e-12;
/// Residual bound on every linear solve against `(I − γP)`.
pub const SOLVE_RESIDUAL_TOL: f64 = 1e-8;
pub const DEFAULT_VI_TOL: f64 = 1e-10;
pub const VI_ITERATION_CAP: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub enum Reward {
    /// `r(s)`, shared by every action.
    State(DVector<f64>),
    /// `r(s, a)` stored at `a·n + s`.
    StateAction(DVector<f64>),
}

impl Reward {
    #[inline]
    pub fn value(&self, n: usize, s: usize, a: usize) -> f64 {
        match self {
            Reward::State(r) => r[s],
            Reward::StateAction(r) => r[a * n + s],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        match self {
            Reward::State(r) | Reward::StateAction(r) => r.as_slice(),
        }
    }

    fn check(&self, n: usize, m: usize) -> Result<()> {
        let (len, want) = match self {
            Reward::State(r) => (r.len(), n),
            Reward::StateAction(r) => (r.len(), n * m),
        };
        if len != want {
            return Err(IrlError::Dimension(format!("reward has length {len}, expected {want}")));
        }
        if self.as_slice().iter().any(|x| !x.is_finite()) {
            return Err(IrlError::Invalid("reward contains non-finite entries".into()));
        }
        Ok(())
    }
}

/// A finite discounted MDP. Transition matrices are shared, so attaching a
/// different reward with [`Mdp::with_reward`] is cheap.
#[derive(Debug, Clone)]
pub struct Mdp {
    n: usize,
    m: usize,
    transitions: Arc<[DMatrix<f64>]>,
    discount: f64,
    reward: Option<Reward>,
}

impl Mdp {
    pub fn new(transitions: Vec<DMatrix<f64>>, discount: f64, reward: Option<Reward>) -> Result<Self> {
        let m = transitions.len();
        if m == 0 {
            return Err(IrlError::Invalid("an MDP needs at least one action".into()));
        }
        let n = transitions[0].nrows();
        if n == 0 {
            return Err(IrlError::Invalid("an MDP needs at least one state".into()));
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(IrlError::Invalid(format!("discount {discount} outside [0, 1)")));
        }
        for (a, p) in transitions.iter().enumerate() {
            if p.nrows() != n || p.ncols() != n {
                return Err(IrlError::Dimension(format!(
                    "transition matrix for action {a} is {}x{}, expected {n}x{n}",
                    p.nrows(),
                    p.ncols()
                )));
            }
            for s in 0..n {
                let row = p.row(s);
                if row.iter().any(|&x| x < 0.0 || !x.is_finite()) {
                    return Err(IrlError::Invalid(format!("P[{a}] row {s} has a negative or non-finite entry")));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > STOCHASTIC_TOL {
                    return Err(IrlError::Invalid(format!("P[{a}] row {s} sums to {sum}")));
                }
            }
        }
        if let Some(r) = &reward {
            r.check(n, m)?;
        }
        Ok(Mdp { n, m, transitions: transitions.into(), discount, reward })
    }

    pub fn n_states(&self) -> usize {
        self.n
    }

    pub fn n_actions(&self) -> usize {
        self.m
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn reward(&self) -> Option<&Reward> {
        self.reward.as_ref()
    }

    pub fn transition(&self, action: usize) -> &DMatrix<f64> {
        &self.transitions[action]
    }

    pub fn transitions(&self) -> &[DMatrix<f64>] {
        &self.transitions
    }

    pub fn with_reward(&self, reward: Reward) -> Result<Mdp> {
        reward.check(self.n, self.m)?;
        Ok(Mdp { reward: Some(reward), ..self.clone() })
    }

    pub fn with_discount(&self, discount: f64) -> Result<Mdp> {
        if !(0.0..1.0).contains(&discount) {
            return Err(IrlError::Invalid(format!("discount {discount} outside [0, 1)")));
        }
        Ok(Mdp { discount, ..self.clone() })
    }

    pub fn without_reward(&self) -> Mdp {
        Mdp { reward: None, ..self.clone() }
    }

    fn require_reward(&self) -> Result<&Reward> {
        self.reward.as_ref().ok_or(IrlError::RewardUnspecified)
    }

    /// Uniform mixture of every action's row at `s`.
    pub fn averaged_row(&self, s: usize) -> RowDVector<f64> {
        let mut row = RowDVector::zeros(self.n);
        for p in self.transitions.iter() {
            row += p.row(s);
        }
        row / self.m as f64
    }

    /// `P_π`, assembled row by row from the transition matrices.
    pub fn policy_transition(&self, policy: &Policy) -> Result<DMatrix<f64>> {
        policy.check(self)?;
        let mut p = DMatrix::zeros(self.n, self.n);
        for (s, &a) in policy.actions().iter().enumerate() {
            p.set_row(s, &self.transitions[a].row(s));
        }
        Ok(p)
    }

    /// Q-table for value vector `values` under this MDP's reward.
    pub fn q_factors(&self, values: &ValueVector) -> Result<QTable> {
        let reward = self.require_reward()?;
        q_factors_with(self, reward, values)
    }

    /// `V^π`, the unique solution of `(I − γP_π)V = r_π`.
    pub fn policy_evaluation(&self, policy: &Policy) -> Result<ValueVector> {
        let reward = self.require_reward()?;
        let p_pi = self.policy_transition(policy)?;
        let r_pi = DVector::from_fn(self.n, |s, _| reward.value(self.n, s, policy.action(s)));
        let a = discounted_system(&p_pi, self.discount);
        let v = a
            .clone()
            .lu()
            .solve(&r_pi)
            .ok_or_else(|| IrlError::numerical("singular policy-evaluation system"))?;
        let residual = inf_norm(&(&a * &v - &r_pi));
        if !(residual < SOLVE_RESIDUAL_TOL) {
            return Err(IrlError::numerical(format!("policy evaluation residual {residual:e}")));
        }
        Ok(ValueVector(v))
    }

    /// Value iteration from `V = 0` until the sup-norm update drops below `tol`.
    /// Returns the final values, the greedy policy (ties to the lowest action
    /// index) and the number of sweeps performed.
    pub fn value_iteration(&self, tol: f64) -> Result<(ValueVector, Policy, usize)> {
        let reward = self.require_reward()?;
        Ok(value_iteration_with(self, reward, tol))
    }

    /// Whether `policy` is Bellman-optimal: `Q^π(s, π(s)) ≥ Q^π(s, a) − slack` everywhere.
    pub fn bellman_optimality_check(&self, policy: &Policy, slack: f64) -> Result<bool> {
        let v = self.policy_evaluation(policy)?;
        let q = self.q_factors(&v)?;
        Ok((0..self.n).all(|s| {
            let chosen = q.get(s, policy.action(s));
            (0..self.m).all(|a| chosen >= q.get(s, a) - slack)
        }))
    }
}

fn q_factors_with(mdp: &Mdp, reward: &Reward, values: &ValueVector) -> Result<QTable> {
    if values.len() != mdp.n {
        return Err(IrlError::Dimension(format!("value vector has length {}, expected {}", values.len(), mdp.n)));
    }
    let mut q = DMatrix::zeros(mdp.n, mdp.m);
    for (a, p) in mdp.transitions.iter().enumerate() {
        let next = p * &values.0;
        for s in 0..mdp.n {
            q[(s, a)] = reward.value(mdp.n, s, a) + mdp.discount * next[s];
        }
    }
    Ok(QTable(q))
}

pub(crate) fn value_iteration_with(mdp: &Mdp, reward: &Reward, tol: f64) -> (ValueVector, Policy, usize) {
    let (n, m) = (mdp.n, mdp.m);
    let mut v = DVector::zeros(n);
    let mut next_v = DVector::zeros(n);
    let mut scratch = DVector::zeros(n);
    let mut iterations = 0;
    while iterations < VI_ITERATION_CAP {
        next_v.fill(f64::NEG_INFINITY);
        for (a, p) in mdp.transitions.iter().enumerate() {
            p.mul_to(&v, &mut scratch);
            for s in 0..n {
                let q = reward.value(n, s, a) + mdp.discount * scratch[s];
                if q > next_v[s] {
                    next_v[s] = q;
                }
            }
        }
        iterations += 1;
        let delta = v.iter().zip(next_v.iter()).fold(0.0_f64, |acc, (x, y)| acc.max((x - y).abs()));
        std::mem::swap(&mut v, &mut next_v);
        if delta < tol {
            break;
        }
    }
    let v = ValueVector(v);
    let q = q_factors_with(mdp, reward, &v).expect("dimensions fixed by construction");
    let policy = Policy((0..n).map(|s| q.argmax(s)).collect());
    debug_assert!(policy.0.iter().all(|&a| a < m));
    (v, policy, iterations)
}

/// The constraint operator `G`: block `a` (rows `a·n .. (a+1)·n`) holds
/// `(P_π − P_a)(I − γP_π)⁻¹`, so `π` is optimal for a state reward `r` iff `G·r ≥ 0`.
pub fn constraint_operator(mdp: &Mdp, policy: &Policy) -> Result<DMatrix<f64>> {
    if matches!(mdp.reward, Some(Reward::StateAction(_))) {
        return Err(IrlError::Invalid("constraint operator requires a state-only reward regime".into()));
    }
    let p_pi = mdp.policy_transition(policy)?;
    constraint_operator_from(mdp, &p_pi)
}

/// [`constraint_operator`] for an explicit `P_π`, which may mix actions or
/// average them at some states.
pub fn constraint_operator_from(mdp: &Mdp, p_pi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = mdp.n;
    if p_pi.nrows() != n || p_pi.ncols() != n {
        return Err(IrlError::Dimension(format!("P_pi must be {n}x{n}")));
    }
    // G_aᵀ = (I − γP_π)⁻ᵀ (P_π − P_a)ᵀ: one factorization of the transposed system.
    let system_t = discounted_system(p_pi, mdp.discount).transpose();
    let lu = system_t.clone().lu();
    let mut g = DMatrix::zeros(n * mdp.m, n);
    for (a, p_a) in mdp.transitions.iter().enumerate() {
        let diff_t = (p_pi - p_a).transpose();
        let block_t = lu
            .solve(&diff_t)
            .ok_or_else(|| IrlError::numerical("singular (I - gamma P_pi)"))?;
        let residual = (&system_t * &block_t - &diff_t).amax();
        if !(residual < SOLVE_RESIDUAL_TOL) {
            return Err(IrlError::numerical(format!("constraint operator solve residual {residual:e}")));
        }
        g.view_mut((a * n, 0), (n, n)).copy_from(&block_t.transpose());
    }
    Ok(g)
}

/// Deterministic stationary policy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy(pub Vec<usize>);

impl Policy {
    pub fn actions(&self) -> &[usize] {
        &self.0
    }

    #[inline]
    pub fn action(&self, s: usize) -> usize {
        self.0[s]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn check(&self, mdp: &Mdp) -> Result<()> {
        if self.0.len() != mdp.n {
            return Err(IrlError::Dimension(format!("policy has length {}, expected {}", self.0.len(), mdp.n)));
        }
        if let Some((s, a)) = self.0.iter().enumerate().find(|(_, &a)| a >= mdp.m) {
            return Err(IrlError::Invalid(format!("policy action {a} at state {s} out of range")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueVector(pub DVector<f64>);

impl ValueVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `n×m` table of Q-factors.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable(pub DMatrix<f64>);

impl QTable {
    #[inline]
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.0[(s, a)]
    }

    /// Greedy action at `s`, lowest index on exact ties.
    pub fn argmax(&self, s: usize) -> usize {
        let row = self.0.row(s);
        let mut best = 0;
        for a in 1..row.len() {
            if row[a] > row[best] {
                best = a;
            }
        }
        best
    }

    pub fn max(&self, s: usize) -> f64 {
        self.0.row(s).max()
    }

    /// Whether `a` attains the row maximum at `s` within `tol`.
    pub fn is_near_greedy(&self, s: usize, a: usize, tol: f64) -> bool {
        self.get(s, a) >= self.max(s) - tol
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct MdpFile {
    n: usize,
    m: usize,
    gamma: f64,
    transitions: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reward: Option<Vec<f64>>,
    /// Optional per-state feature vectors in `[0,1]^d`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    features: Option<Vec<Vec<f64>>>,
}

/// An MDP as read from or written to its JSON document, optionally carrying
/// per-state features.
#[derive(Debug, Clone)]
pub struct MdpDocument {
    pub mdp: Mdp,
    pub features: Option<Vec<DVector<f64>>>,
}

impl MdpDocument {
    pub fn from_json(text: &str) -> Result<Self> {
        let file: MdpFile = serde_json::from_str(text)?;
        if file.transitions.len() != file.m {
            return Err(IrlError::Dimension(format!(
                "{} transition matrices for m = {}",
                file.transitions.len(),
                file.m
            )));
        }
        let mut transitions = Vec::with_capacity(file.m);
        for (a, rows) in file.transitions.iter().enumerate() {
            if rows.len() != file.n || rows.iter().any(|r| r.len() != file.n) {
                return Err(IrlError::Dimension(format!("transition matrix {a} is not {0}x{0}", file.n)));
            }
            transitions.push(DMatrix::from_fn(file.n, file.n, |i, j| rows[i][j]));
        }
        let reward = match file.reward {
            None => None,
            Some(r) if r.len() == file.n => Some(Reward::State(DVector::from_vec(r))),
            Some(r) if r.len() == file.n * file.m => Some(Reward::StateAction(DVector::from_vec(r))),
            Some(r) => {
                return Err(IrlError::Dimension(format!(
                    "reward length {} is neither n = {} nor n·m = {}",
                    r.len(),
                    file.n,
                    file.n * file.m
                )))
            }
        };
        let features = match file.features {
            None => None,
            Some(f) => {
                if f.len() != file.n {
                    return Err(IrlError::Dimension(format!("{} feature vectors for {} states", f.len(), file.n)));
                }
                if f.iter().flatten().any(|x| !(0.0..=1.0).contains(x)) {
                    return Err(IrlError::Invalid("features must lie in [0, 1]".into()));
                }
                Some(f.into_iter().map(DVector::from_vec).collect())
            }
        };
        Ok(MdpDocument { mdp: Mdp::new(transitions, file.gamma, reward)?, features })
    }

    pub fn to_json(&self) -> Result<String> {
        let mdp = &self.mdp;
        let file = MdpFile {
            n: mdp.n,
            m: mdp.m,
            gamma: mdp.discount,
            transitions: mdp
                .transitions
                .iter()
                .map(|p| p.row_iter().map(|row| row.iter().copied().collect()).collect())
                .collect(),
            reward: mdp.reward.as_ref().map(|r| r.as_slice().to_vec()),
            features: self.features.as_ref().map(|f| f.iter().map(|x| x.iter().copied().collect()).collect()),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn deterministic(n: usize, next: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |i, j| if next[i] == j { 1.0 } else { 0.0 })
    }

    fn two_cycle(gamma: f64) -> Mdp {
        let p = deterministic(2, &[1, 0]);
        Mdp::new(vec![p], gamma, Some(Reward::State(DVector::from_vec(vec![1.0, 0.0])))).unwrap()
    }

    fn dominant_action() -> Mdp {
        let p = DMatrix::from_element(1, 1, 1.0);
        Mdp::new(vec![p.clone(), p], 0.9, Some(Reward::StateAction(DVector::from_vec(vec![1.0, 2.0])))).unwrap()
    }

    #[test]
    fn rejects_non_stochastic_rows() {
        let p = DMatrix::from_row_slice(2, 2, &[0.5, 0.4, 0.0, 1.0]);
        assert!(matches!(Mdp::new(vec![p], 0.9, None), Err(IrlError::Invalid(_))));
        let p = DMatrix::from_row_slice(2, 2, &[1.5, -0.5, 0.0, 1.0]);
        assert!(Mdp::new(vec![p], 0.9, None).is_err());
        assert!(Mdp::new(vec![DMatrix::identity(2, 2)], 1.0, None).is_err());
    }

    #[test]
    fn single_state_geometric_series() {
        let p = DMatrix::from_element(1, 1, 1.0);
        let mdp = Mdp::new(vec![p], 0.9, Some(Reward::State(DVector::from_element(1, 1.0)))).unwrap();
        let v = mdp.policy_evaluation(&Policy(vec![0])).unwrap();
        assert!((v.0[0] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn zero_reward_has_zero_value() {
        let mdp = two_cycle(0.7).with_reward(Reward::State(DVector::zeros(2))).unwrap();
        let v = mdp.policy_evaluation(&Policy(vec![0, 0])).unwrap();
        assert_eq!(v.0, DVector::zeros(2));
        let (v, pi, _) = mdp.value_iteration(1e-10).unwrap();
        assert_eq!(v.0, DVector::zeros(2));
        assert_eq!(pi.0, vec![0, 0]);
    }

    #[test]
    fn missing_reward_is_reported() {
        let mdp = two_cycle(0.5).without_reward();
        assert!(matches!(mdp.policy_evaluation(&Policy(vec![0, 0])), Err(IrlError::RewardUnspecified)));
        assert!(matches!(mdp.value_iteration(1e-10), Err(IrlError::RewardUnspecified)));
    }

    #[test]
    fn two_state_cycle_against_power_iteration() {
        let mdp = two_cycle(0.5);
        let v = mdp.policy_evaluation(&Policy(vec![0, 0])).unwrap();
        // By hand: V0 = 1 + V1/2, V1 = V0/2.
        assert!((v.0[0] - 4.0 / 3.0).abs() < 1e-12);
        assert!((v.0[1] - 2.0 / 3.0).abs() < 1e-12);
        let (mut a, mut b) = (0.0, 0.0);
        for _ in 0..200 {
            (a, b) = (1.0 + 0.5 * b, 0.5 * a);
        }
        assert!((v.0[0] - a).abs() < 1e-12 && (v.0[1] - b).abs() < 1e-12);

        let q = mdp.q_factors(&v).unwrap();
        assert!((q.get(0, 0) - (1.0 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
        assert!((q.get(1, 0) - (0.5 * 4.0 / 3.0)).abs() < 1e-12);
        // The fixed point reproduces itself through the Q equation.
        assert!((q.get(0, 0) - v.0[0]).abs() < 1e-12 && (q.get(1, 0) - v.0[1]).abs() < 1e-12);
    }

    #[test]
    fn q_factors_with_zero_values_equal_reward() {
        let mdp = dominant_action();
        let q = mdp.q_factors(&ValueVector(DVector::zeros(1))).unwrap();
        assert_eq!(q.get(0, 0), 1.0);
        assert_eq!(q.get(0, 1), 2.0);
        assert!(mdp.q_factors(&ValueVector(DVector::zeros(3))).is_err());
    }

    #[test]
    fn identical_actions_give_identical_columns() {
        let p = DMatrix::from_row_slice(2, 2, &[0.3, 0.7, 0.6, 0.4]);
        let mdp = Mdp::new(vec![p.clone(), p.clone(), p], 0.8, Some(Reward::State(DVector::from_vec(vec![0.2, -1.0]))))
            .unwrap();
        let q = mdp.q_factors(&ValueVector(DVector::from_vec(vec![1.5, -0.25]))).unwrap();
        for s in 0..2 {
            assert_eq!(q.get(s, 0), q.get(s, 1));
            assert_eq!(q.get(s, 0), q.get(s, 2));
        }
    }

    #[test]
    fn dominant_action_value_iteration() {
        let mdp = dominant_action();
        let (v, pi, iters) = mdp.value_iteration(1e-10).unwrap();
        assert!((v.0[0] - 20.0).abs() < 1e-8);
        assert_eq!(pi.0, vec![1]);
        assert!(iters > 1);
        assert!(mdp.bellman_optimality_check(&pi, 1e-8).unwrap());
        assert!(!mdp.bellman_optimality_check(&Policy(vec![0]), 1e-8).unwrap());
    }

    #[test]
    fn shared_transitions_make_constraint_operator_zero() {
        let p = DMatrix::from_row_slice(3, 3, &[0.2, 0.8, 0.0, 0.0, 0.5, 0.5, 1.0, 0.0, 0.0]);
        let mdp = Mdp::new(vec![p.clone(), p], 0.9, None).unwrap();
        let g = constraint_operator(&mdp, &Policy(vec![0, 1, 0])).unwrap();
        assert_eq!(g.shape(), (6, 3));
        assert!(g.amax() < 1e-15);
    }

    #[test]
    fn constraint_operator_rejects_state_action_regime() {
        let mdp = dominant_action();
        assert!(constraint_operator(&mdp, &Policy(vec![0])).is_err());
    }

    #[test]
    fn json_round_trip_and_validation() {
        let mdp = two_cycle(0.5);
        let doc = MdpDocument { mdp, features: Some(vec![DVector::from_vec(vec![0.0]), DVector::from_vec(vec![1.0])]) };
        let text = doc.to_json().unwrap();
        let back = MdpDocument::from_json(&text).unwrap();
        assert_eq!(back.mdp.transition(0), doc.mdp.transition(0));
        assert_eq!(back.mdp.reward(), doc.mdp.reward());
        assert_eq!(back.features, doc.features);

        let bad = r#"{"n":2,"m":1,"gamma":0.5,"transitions":[[[0.5,0.6],[0,1]]]}"#;
        assert!(MdpDocument::from_json(bad).is_err());
        let sa = r#"{"n":1,"m":2,"gamma":0.5,"transitions":[[[1]],[[1]]],"reward":[1,2]}"#;
        let doc = MdpDocument::from_json(sa).unwrap();
        assert!(matches!(doc.mdp.reward(), Some(Reward::StateAction(_))));
    }
}
