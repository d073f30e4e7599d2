//! Expert observations: decision maps, decision trajectories and the
//! two-layer preference graphs built from them.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{IrlError, Result};
use crate::mdp::{Mdp, QTable, Reward, DEFAULT_VI_TOL};

/// Ties in the likelihood indicator are resolved in favor of the observed action.
pub const INDICATOR_TOL: f64 = 1e-12;

/// Independent `(state, action)` draws. Repeated states are allowed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DecisionMap {
    pub pairs: Vec<(usize, usize)>,
}

impl DecisionMap {
    pub fn new(pairs: Vec<(usize, usize)>) -> Self {
        DecisionMap { pairs }
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn check(&self, mdp: &Mdp) -> Result<()> {
        for &(s, a) in &self.pairs {
            if s >= mdp.n_states() || a >= mdp.n_actions() {
                return Err(IrlError::Invalid(format!("observation ({s}, {a}) out of range")));
            }
        }
        Ok(())
    }

    /// Distinct observed states in increasing order.
    pub fn states(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.pairs.iter().map(|p| p.0).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    pub fn extend(&mut self, other: &DecisionMap) {
        self.pairs.extend_from_slice(&other.pairs);
    }
}

/// An ordered history `s¹, a¹, s², a², …`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trajectory {
    pub steps: Vec<(usize, usize)>,
}

impl Trajectory {
    pub fn new(steps: Vec<(usize, usize)>) -> Self {
        Trajectory { steps }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Transitions with zero probability under `mdp`. These are reported, not
    /// rejected: recorded behavior may come from a slightly different model.
    pub fn support_warnings(&self, mdp: &Mdp) -> Vec<String> {
        self.steps
            .windows(2)
            .enumerate()
            .filter_map(|(h, w)| {
                let ((s, a), (next, _)) = (w[0], w[1]);
                let p = mdp.transition(a)[(s, next)];
                (p <= 0.0).then(|| format!("step {h}: transition {s} -a{a}-> {next} has zero probability"))
            })
            .collect()
    }
}

/// Extract the `(state, action)` pairs of a trajectory, in order.
pub fn trajectory_to_decision_map(traj: &Trajectory) -> Result<DecisionMap> {
    if traj.is_empty() {
        return Err(IrlError::Invalid("empty trajectory".into()));
    }
    Ok(DecisionMap { pairs: traj.steps.clone() })
}

/// Two-layer preference graph over the actions at one state.
///
/// Node `u` stands for action `node_action_map[u]`. The first `n_top` nodes
/// form the top layer (observed-optimal actions), the rest the bottom layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreferenceGraph {
    pub state: usize,
    node_action_map: Vec<usize>,
    n_top: usize,
    /// `u → v`, `u` in the top layer and `v` in the bottom layer.
    pub strict_edges: Vec<(usize, usize)>,
    /// `u ↔ v`, both in the top layer, `u < v`.
    pub equiv_edges: Vec<(usize, usize)>,
}

impl PreferenceGraph {
    /// Graph with top layer `top` (observed actions) and bottom layer the
    /// remaining actions of `0..m`.
    pub fn new(state: usize, top: &[usize], m: usize) -> Result<Self> {
        let mut top: Vec<usize> = top.to_vec();
        top.sort_unstable();
        top.dedup();
        if top.is_empty() {
            return Err(IrlError::Invalid(format!("preference graph at state {state} has an empty top layer")));
        }
        if let Some(&a) = top.iter().find(|&&a| a >= m) {
            return Err(IrlError::Invalid(format!("action {a} out of range for {m} actions")));
        }
        let bottom: Vec<usize> = (0..m).filter(|a| top.binary_search(a).is_err()).collect();
        let n_top = top.len();
        let node_action_map: Vec<usize> = top.iter().chain(bottom.iter()).copied().collect();
        let strict_edges = (0..n_top).flat_map(|u| (n_top..m).map(move |v| (u, v))).collect();
        let equiv_edges = (0..n_top).flat_map(|u| (u + 1..n_top).map(move |v| (u, v))).collect();
        Ok(PreferenceGraph { state, node_action_map, n_top, strict_edges, equiv_edges })
    }

    #[inline]
    pub fn node_action(&self, node: usize) -> usize {
        self.node_action_map[node]
    }

    pub fn top_nodes(&self) -> std::ops::Range<usize> {
        0..self.n_top
    }

    pub fn bottom_nodes(&self) -> std::ops::Range<usize> {
        self.n_top..self.node_action_map.len()
    }

    /// Actions in the top layer, ascending.
    pub fn top_actions(&self) -> &[usize] {
        &self.node_action_map[..self.n_top]
    }

    pub fn bottom_actions(&self) -> &[usize] {
        &self.node_action_map[self.n_top..]
    }

    /// Representative optimal action: the lowest-indexed top-layer action.
    pub fn representative_action(&self) -> usize {
        self.node_action_map[0]
    }

    pub fn strict_action_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.strict_edges.iter().map(|&(u, v)| (self.node_action(u), self.node_action(v)))
    }

    pub fn equiv_action_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.equiv_edges.iter().map(|&(u, v)| (self.node_action(u), self.node_action(v)))
    }
}

/// One graph per distinct observed state (ascending state order). An action
/// joins the top layer when it was observed at least once at that state.
/// States where every action was observed produce graphs without strict edges;
/// they are kept and listed in the returned warnings.
pub fn build_preference_graphs(observations: &DecisionMap, m: usize) -> Result<(Vec<PreferenceGraph>, Vec<String>)> {
    if m < 2 {
        return Err(IrlError::Invalid("preference graphs need at least two actions".into()));
    }
    let mut seen: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(s, a) in &observations.pairs {
        if a >= m {
            return Err(IrlError::Invalid(format!("action {a} out of range for {m} actions")));
        }
        seen.entry(s).or_default().push(a);
    }
    let mut warnings = Vec::new();
    let mut graphs = Vec::with_capacity(seen.len());
    for (s, actions) in seen {
        let g = PreferenceGraph::new(s, &actions, m)?;
        if g.strict_edges.is_empty() {
            warnings.push(format!("state {s}: every action observed, graph has no strict edges"));
        }
        graphs.push(g);
    }
    Ok((graphs, warnings))
}

/// Observed states, their feature vectors and one preference graph each.
#[derive(Debug, Clone)]
pub struct ObservationSet {
    states: Vec<usize>,
    features: Vec<DVector<f64>>,
    graphs: Vec<PreferenceGraph>,
}

impl ObservationSet {
    pub fn new(graphs: Vec<PreferenceGraph>, features: Vec<DVector<f64>>) -> Result<Self> {
        if graphs.is_empty() {
            return Err(IrlError::Invalid("an observation set needs at least one state".into()));
        }
        if graphs.len() != features.len() {
            return Err(IrlError::Dimension(format!("{} graphs but {} feature vectors", graphs.len(), features.len())));
        }
        let d = features[0].len();
        for f in &features {
            if f.len() != d {
                return Err(IrlError::Dimension("feature vectors differ in dimension".into()));
            }
            if f.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(IrlError::Invalid("features must lie in [0, 1]".into()));
            }
        }
        let states: Vec<usize> = graphs.iter().map(|g| g.state).collect();
        let mut sorted = states.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != states.len() {
            return Err(IrlError::Invalid("observed states must be distinct".into()));
        }
        Ok(ObservationSet { states, features, graphs })
    }

    /// Build graphs from a decision map and featurize each observed state.
    pub fn from_decisions(
        decisions: &DecisionMap,
        m: usize,
        featurize: impl Fn(usize) -> DVector<f64>,
    ) -> Result<(Self, Vec<String>)> {
        let (graphs, warnings) = build_preference_graphs(decisions, m)?;
        let features = graphs.iter().map(|g| featurize(g.state)).collect();
        Ok((Self::new(graphs, features)?, warnings))
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[usize] {
        &self.states
    }

    pub fn features(&self) -> &[DVector<f64>] {
        &self.features
    }

    pub fn graphs(&self) -> &[PreferenceGraph] {
        &self.graphs
    }

    pub fn feature_dim(&self) -> usize {
        self.features[0].len()
    }

    pub fn n_strict_edges(&self) -> usize {
        self.graphs.iter().map(|g| g.strict_edges.len()).sum()
    }

    pub fn n_equiv_edges(&self) -> usize {
        self.graphs.iter().map(|g| g.equiv_edges.len()).sum()
    }
}

/// 1 iff `a` attains the maximum Q-value at `s` (weak inequality, within
/// [`INDICATOR_TOL`]).
pub fn likelihood_indicator(q: &QTable, pair: (usize, usize)) -> u8 {
    let (s, a) = pair;
    u8::from(q.is_near_greedy(s, a, INDICATOR_TOL))
}

/// Model for `p(a | s, r)` in the observation densities below.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActionModel {
    /// The 0/1 optimality indicator on the optimal Q-table under `r`.
    Indicator,
    /// Softmax over optimal Q-values with inverse temperature `beta`.
    Boltzmann { beta: f64 },
}

fn action_log_probs(mdp: &Mdp, reward: &DVector<f64>, model: ActionModel) -> Result<QTable> {
    let rewarded = mdp.with_reward(Reward::State(reward.clone()))?;
    let (v, _, _) = rewarded.value_iteration(DEFAULT_VI_TOL)?;
    let q = rewarded.q_factors(&v)?;
    let (n, m) = (mdp.n_states(), mdp.n_actions());
    let mut logp = nalgebra::DMatrix::zeros(n, m);
    for s in 0..n {
        match model {
            ActionModel::Indicator => {
                for a in 0..m {
                    logp[(s, a)] = if likelihood_indicator(&q, (s, a)) == 1 { 0.0 } else { f64::NEG_INFINITY };
                }
            }
            ActionModel::Boltzmann { beta } => {
                let top = q.max(s);
                let lse = top + (0..m).map(|a| (beta * (q.get(s, a) - top)).exp()).sum::<f64>().ln() / beta;
                for a in 0..m {
                    logp[(s, a)] = beta * (q.get(s, a) - lse);
                }
            }
        }
    }
    Ok(QTable(logp))
}

/// `log p(O₁ | r)` for independent draws with uniform state distribution.
pub fn decision_map_log_likelihood(mdp: &Mdp, obs: &DecisionMap, reward: &DVector<f64>, model: ActionModel) -> Result<f64> {
    obs.check(mdp)?;
    let logp = action_log_probs(mdp, reward, model)?;
    let log_p0 = -(mdp.n_states() as f64).ln();
    Ok(obs.pairs.iter().map(|&(s, a)| log_p0 + logp.get(s, a)).sum())
}

/// `log p(O₂ | r)` for a trajectory: uniform initial state, then Markov
/// transitions interleaved with action choices.
pub fn trajectory_log_likelihood(mdp: &Mdp, traj: &Trajectory, reward: &DVector<f64>, model: ActionModel) -> Result<f64> {
    let pairs = trajectory_to_decision_map(traj)?;
    pairs.check(mdp)?;
    let logp = action_log_probs(mdp, reward, model)?;
    let mut total = -(mdp.n_states() as f64).ln();
    for (h, &(s, a)) in traj.steps.iter().enumerate() {
        if h > 0 {
            let (prev_s, prev_a) = traj.steps[h - 1];
            total += mdp.transition(prev_a)[(prev_s, s)].ln();
        }
        total += logp.get(s, a);
    }
    Ok(total)
}

/// On-disk observation document, discriminated by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObservationFile {
    DecisionMap { pairs: Vec<[usize; 2]> },
    /// Flat `[s, a, s, a, …]`.
    Trajectory { steps: Vec<usize> },
    Trajectories { trajectories: Vec<Vec<usize>> },
}

fn flat_to_trajectory(flat: &[usize]) -> Result<Trajectory> {
    if flat.len() % 2 != 0 {
        return Err(IrlError::Invalid("trajectory must alternate states and actions".into()));
    }
    Ok(Trajectory::new(flat.chunks(2).map(|c| (c[0], c[1])).collect()))
}

impl ObservationFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn from_trajectories(trajs: &[Trajectory]) -> Self {
        ObservationFile::Trajectories {
            trajectories: trajs.iter().map(|t| t.steps.iter().flat_map(|&(s, a)| [s, a]).collect()).collect(),
        }
    }

    /// Flatten into a decision map; trajectories contribute their pairs.
    /// With an `mdp`, trajectory steps off the transition support are returned as warnings.
    pub fn to_decision_map(&self, mdp: Option<&Mdp>) -> Result<(DecisionMap, Vec<String>)> {
        let mut warnings = Vec::new();
        let mut trajs = Vec::new();
        match self {
            ObservationFile::DecisionMap { pairs } => {
                return Ok((DecisionMap::new(pairs.iter().map(|p| (p[0], p[1])).collect()), warnings))
            }
            ObservationFile::Trajectory { steps } => trajs.push(flat_to_trajectory(steps)?),
            ObservationFile::Trajectories { trajectories } => {
                for t in trajectories {
                    trajs.push(flat_to_trajectory(t)?);
                }
            }
        }
        let mut map = DecisionMap::default();
        for t in &trajs {
            if let Some(mdp) = mdp {
                let in_range = t.steps.iter().all(|&(s, a)| s < mdp.n_states() && a < mdp.n_actions());
                if in_range {
                    warnings.extend(t.support_warnings(mdp));
                }
            }
            map.extend(&trajectory_to_decision_map(t)?);
        }
        Ok((map, warnings))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn trajectory_pairs_in_order() {
        let t = Trajectory::new(vec![(1, 2), (3, 1)]);
        assert_eq!(trajectory_to_decision_map(&t).unwrap().pairs, vec![(1, 2), (3, 1)]);
        assert!(trajectory_to_decision_map(&Trajectory::default()).is_err());
    }

    #[test]
    fn single_observation_graph() {
        let (g, warn) = build_preference_graphs(&DecisionMap::new(vec![(4, 0)]), 3).unwrap();
        assert!(warn.is_empty());
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].top_actions(), &[0]);
        assert_eq!(g[0].bottom_actions(), &[1, 2]);
        assert_eq!(g[0].strict_edges.len(), 2);
        assert_eq!(g[0].equiv_edges.len(), 0);
    }

    #[test]
    fn two_observed_actions_graph() {
        let (g, _) = build_preference_graphs(&DecisionMap::new(vec![(0, 0), (0, 1)]), 3).unwrap();
        assert_eq!(g[0].top_actions(), &[0, 1]);
        assert_eq!(g[0].strict_edges.len(), 2);
        assert_eq!(g[0].equiv_edges.len(), 1);
        assert_eq!(g[0].equiv_action_edges().collect::<Vec<_>>(), vec![(0, 1)]);
        let strict: Vec<_> = g[0].strict_action_edges().collect();
        assert_eq!(strict, vec![(0, 2), (1, 2)]);
    }

    #[test]
    fn all_actions_observed_is_flagged() {
        let (g, warn) = build_preference_graphs(&DecisionMap::new(vec![(0, 0), (0, 1)]), 2).unwrap();
        assert!(g[0].strict_edges.is_empty());
        assert_eq!(warn.len(), 1);
        assert!(build_preference_graphs(&DecisionMap::new(vec![(0, 0)]), 1).is_err());
    }

    #[test]
    fn node_action_map_is_a_bijection() {
        let (g, _) = build_preference_graphs(&DecisionMap::new(vec![(0, 3), (0, 1)]), 5).unwrap();
        let mut acts: Vec<usize> = (0..5).map(|u| g[0].node_action(u)).collect();
        acts.sort_unstable();
        assert_eq!(acts, vec![0, 1, 2, 3, 4]);
        assert_eq!(g[0].representative_action(), 1);
    }

    #[test]
    fn indicator_examples() {
        let q = QTable(DMatrix::from_row_slice(1, 2, &[1.0, 2.0]));
        assert_eq!(likelihood_indicator(&q, (0, 1)), 1);
        assert_eq!(likelihood_indicator(&q, (0, 0)), 0);
        let tied = QTable(DMatrix::from_row_slice(1, 3, &[0.5, 0.5, 0.5]));
        assert!((0..3).all(|a| likelihood_indicator(&tied, (0, a)) == 1));
    }

    #[test]
    fn observation_file_kinds() {
        let f: ObservationFile = serde_json::from_str(r#"{"kind":"trajectory","steps":[0,1,2,0]}"#).unwrap();
        let (map, _) = f.to_decision_map(None).unwrap();
        assert_eq!(map.pairs, vec![(0, 1), (2, 0)]);
        let f: ObservationFile = serde_json::from_str(r#"{"kind":"decision_map","pairs":[[3,1],[3,0]]}"#).unwrap();
        assert_eq!(f.to_decision_map(None).unwrap().0.states(), vec![3]);
        let f: ObservationFile = serde_json::from_str(r#"{"kind":"trajectory","steps":[0,1,2]}"#).unwrap();
        assert!(f.to_decision_map(None).is_err());
    }
}
