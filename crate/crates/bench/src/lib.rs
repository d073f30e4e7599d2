//! Experiment harness for `irl-core`: the LP baseline, benchmark sweeps over
//! the grid world and mountain car, and CSV emission.

pub mod config;
pub mod emit;
pub mod error;
pub mod harness;
pub mod lirl;

pub use config::{Algorithm, BenchEnv, ExperimentConfig, GpirlSettings};
pub use emit::{aggregate, emit_results, read_results, write_results, AggregateRow};
pub use error::{BenchError, Result};
pub use harness::{run_accuracy_sweep, run_convergence_timing, run_mountaincar_eval, FailureRecord, RunResult, SweepOutput};
pub use lirl::{lirl_baseline, lirl_from_observations, solve_lirl, LirlSettings, LirlSolution};
