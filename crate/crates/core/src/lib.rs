//! Reward inference for finite Markov decision processes.
//!
//! Two estimators are provided: a MAP program under a Gaussian prior that
//! reduces to a convex QP over the Bellman-optimality polytope ([`cpirl`]),
//! and a Gaussian-process model over per-action rewards driven by
//! preference graphs of observed actions ([`gpirl`]). [`env`] builds the
//! GridWorld and mountain-car benchmarks.

pub mod error;
pub mod linalg;
pub mod mdp;
pub mod observations;
pub mod qp;
pub mod cpirl;
pub mod env;
pub mod gpirl;

pub use error::{IrlError, Result};
pub use mdp::{constraint_operator, Mdp, MdpDocument, Policy, QTable, Reward, ValueVector};
pub use observations::{
    build_preference_graphs, likelihood_indicator, trajectory_to_decision_map, DecisionMap, ObservationFile,
    ObservationSet, PreferenceGraph, Trajectory,
};
