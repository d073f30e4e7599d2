//! CSV output, parse-back and per-curve aggregates.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};
use crate::harness::{FailureRecord, RunResult};

pub const RESULTS_HEADER: [&str; 8] = ["algorithm", "env", "n_traj", "seed", "accuracy", "iterations", "wall_ms", "steps"];

const TIMEOUT: &str = "timeout";

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    algorithm: String,
    env: String,
    n_traj: usize,
    seed: u64,
    accuracy: f64,
    iterations: usize,
    wall_ms: f64,
    steps: String,
}

fn format_steps(steps: &[Option<usize>]) -> String {
    steps.iter().map(|s| s.map_or_else(|| TIMEOUT.to_string(), |v| v.to_string())).collect::<Vec<_>>().join(";")
}

fn parse_steps(text: &str) -> Result<Vec<Option<usize>>> {
    if text.is_empty() {
        return Ok(Vec::new());
    }
    text.split(';')
        .map(|t| match t {
            TIMEOUT => Ok(None),
            v => v.parse().map(Some).map_err(|_| BenchError::Config(format!("bad step count '{v}'"))),
        })
        .collect()
}

pub fn write_results<W: Write>(results: &[RunResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if results.is_empty() {
        w.write_record(RESULTS_HEADER)?;
    }
    for r in results {
        w.serialize(Row {
            algorithm: r.algorithm.clone(),
            env: r.env.clone(),
            n_traj: r.n_traj,
            seed: r.seed,
            accuracy: r.accuracy,
            iterations: r.iterations,
            wall_ms: r.wall_ms,
            steps: format_steps(&r.steps),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results<R: Read>(input: R) -> Result<Vec<RunResult>> {
    let mut rd = csv::Reader::from_reader(input);
    rd.deserialize::<Row>()
        .map(|row| {
            let row = row?;
            Ok(RunResult {
                steps: parse_steps(&row.steps)?,
                algorithm: row.algorithm,
                env: row.env,
                n_traj: row.n_traj,
                seed: row.seed,
                accuracy: row.accuracy,
                iterations: row.iterations,
                wall_ms: row.wall_ms,
            })
        })
        .collect()
}

/// One plotted point: a curve (algorithm, env) at one trajectory count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub algorithm: String,
    pub env: String,
    pub n_traj: usize,
    pub runs: usize,
    pub accuracy_mean: f64,
    /// Sample standard deviation across seeds (0 for a single run).
    pub accuracy_std: f64,
    pub accuracy_stderr: f64,
    pub iterations_mean: f64,
    pub iterations_std: f64,
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Aggregates in first-appearance order of each algorithm and env, then by count.
pub fn aggregate(results: &[RunResult]) -> Vec<AggregateRow> {
    let mut order: Vec<(String, String)> = Vec::new();
    let mut groups: BTreeMap<(usize, usize), Vec<&RunResult>> = BTreeMap::new();
    for r in results {
        let key = (r.algorithm.clone(), r.env.clone());
        let idx = order.iter().position(|k| *k == key).unwrap_or_else(|| {
            order.push(key);
            order.len() - 1
        });
        groups.entry((idx, r.n_traj)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((idx, n_traj), runs)| {
            let acc: Vec<f64> = runs.iter().map(|r| r.accuracy).collect();
            let its: Vec<f64> = runs.iter().map(|r| r.iterations as f64).collect();
            let (accuracy_mean, accuracy_std) = mean_std(&acc);
            let (iterations_mean, iterations_std) = mean_std(&its);
            AggregateRow {
                algorithm: order[idx].0.clone(),
                env: order[idx].1.clone(),
                n_traj,
                runs: runs.len(),
                accuracy_mean,
                accuracy_std,
                accuracy_stderr: accuracy_std / (runs.len() as f64).sqrt(),
                iterations_mean,
                iterations_std,
            }
        })
        .collect()
}

pub fn write_aggregate<W: Write>(rows: &[AggregateRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_failures<W: Write>(failures: &[FailureRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if failures.is_empty() {
        w.write_record(["algorithm", "env", "n_traj", "seed", "error"])?;
    }
    for f in failures {
        w.serialize(f)?;
    }
    w.flush()?;
    Ok(())
}

/// Results CSV at `path` and plot data beside it (or at `plot`).
pub fn emit_results(results: &[RunResult], path: &Path, plot: Option<&Path>) -> Result<()> {
    if results.is_empty() {
        return Err(BenchError::Config("no results to emit".into()));
    }
    write_results(results, std::fs::File::create(path)?)?;
    let plot_path = plot.map(Path::to_path_buf).unwrap_or_else(|| path.with_extension("plot.csv"));
    write_aggregate(&aggregate(results), std::fs::File::create(plot_path)?)
}
