//! Evidence maximization over log-hyperparameters by restarted Nelder–Mead.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernel::Hyperparams;
use super::{FitOptions, GpirlModel, GpirlProblem};
use crate::error::{IrlError, Result};

/// Log-hyperparameters beyond this magnitude are treated as failed evaluations.
pub const LOG_THETA_LIMIT: f64 = 12.0;

/// Minimize `f` from `x0` with at most `budget` evaluations. Returns the best
/// point, its value and the number of evaluations used.
pub fn nelder_mead(f: &mut dyn FnMut(&[f64]) -> f64, x0: &[f64], step: f64, budget: usize) -> (Vec<f64>, f64, usize) {
    let d = x0.len();
    let mut evals = 0;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    if budget == 0 {
        return (x0.to_vec(), f64::INFINITY, 0);
    }
    let mut simplex: Vec<(Vec<f64>, f64)> = vec![(x0.to_vec(), eval(x0, &mut evals))];
    for i in 0..d {
        if evals >= budget {
            break;
        }
        let mut x = x0.to_vec();
        x[i] += step;
        let v = eval(&x, &mut evals);
        simplex.push((x, v));
    }
    let best_of = |s: &[(Vec<f64>, f64)]| {
        s.iter().fold((s[0].0.clone(), s[0].1), |b, (x, v)| if *v < b.1 { (x.clone(), *v) } else { b })
    };
    if simplex.len() < d + 1 || d == 0 {
        let (x, v) = best_of(&simplex);
        return (x, v, evals);
    }
    let order = |s: &mut Vec<(Vec<f64>, f64)>| s.sort_by(|a, b| a.1.total_cmp(&b.1));
    order(&mut simplex);
    while evals < budget {
        let spread = simplex[d].1 - simplex[0].1;
        let size = simplex.iter().skip(1).map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)).fold(0.0, f64::max);
        if spread.abs() < 1e-10 && size < 1e-8 {
            break;
        }
        let centroid: Vec<f64> = (0..d).map(|k| simplex[..d].iter().map(|(x, _)| x[k]).sum::<f64>() / d as f64).collect();
        let worst = simplex[d].clone();
        let along = |t: f64| -> Vec<f64> { (0..d).map(|k| centroid[k] + t * (worst.0[k] - centroid[k])).collect() };
        let xr = along(-1.0);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            if evals < budget {
                let xe = along(-2.0);
                let fe = eval(&xe, &mut evals);
                simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
            } else {
                simplex[d] = (xr, fr);
            }
        } else if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
        } else {
            if evals >= budget {
                break;
            }
            let (xc, fc) = if fr < worst.1 {
                let xc = along(-0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            } else {
                let xc = along(0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            };
            if fc < worst.1.min(fr) {
                simplex[d] = (xc, fc);
            } else {
                // Shrink toward the best vertex.
                let best = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    if evals >= budget {
                        break;
                    }
                    let x: Vec<f64> = (0..d).map(|k| best[k] + 0.5 * (vertex.0[k] - best[k])).collect();
                    let v = eval(&x, &mut evals);
                    *vertex = (x, v);
                }
            }
        }
        order(&mut simplex);
    }
    let (x, v) = best_of(&simplex);
    (x, v, evals)
}

#[derive(Debug, Clone)]
pub struct SearchOptions {
    pub restarts: usize,
    pub seed: u64,
    /// Indices into [`Hyperparams::to_log`] that are searched; `None` searches all.
    pub free: Option<Vec<usize>>,
    /// Restart points are drawn uniformly within `±spread` of the initial log-θ.
    pub spread: f64,
    /// Initial simplex edge in log space.
    pub step: f64,
    pub fit: FitOptions,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions { restarts: 5, seed: 0, free: None, spread: 1.0, step: 0.5, fit: FitOptions::default() }
    }
}

#[derive(Debug, Clone)]
pub struct StartDiagnostics {
    pub start: Vec<f64>,
    pub evaluations: usize,
    pub best_log_evidence: Option<f64>,
    pub last_error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub hyperparams: Hyperparams,
    pub model: GpirlModel,
    pub starts: Vec<StartDiagnostics>,
    pub evaluations: usize,
}

pub fn optimize_hyperparams(
    problem: &GpirlProblem,
    init: &Hyperparams,
    budget: usize,
    opts: &SearchOptions,
) -> Result<(Hyperparams, GpirlModel)> {
    search_hyperparams(problem, init, budget, opts).map(|o| (o.hyperparams, o.model))
}

/// Maximize the Laplace evidence. The first start is `init` itself and is
/// evaluated first, so the result is never worse than `init` when `init`
/// fits at all.
pub fn search_hyperparams(problem: &GpirlProblem, init: &Hyperparams, budget: usize, opts: &SearchOptions) -> Result<SearchOutcome> {
    if budget == 0 {
        return Err(IrlError::Invalid("evaluation budget must be at least 1".into()));
    }
    init.check()?;
    let m = init.n_actions();
    let base = init.to_log();
    let free: Vec<usize> = opts.free.clone().unwrap_or_else(|| (0..base.len()).collect());
    if free.iter().any(|&i| i >= base.len()) {
        return Err(IrlError::Invalid("free hyperparameter index out of range".into()));
    }
    let restarts = opts.restarts.max(1);
    let mut best: Option<(f64, Hyperparams, GpirlModel)> = None;
    let mut starts = Vec::with_capacity(restarts);
    let mut total = 0;
    for k in 0..restarts {
        let share = budget / restarts + usize::from(k < budget % restarts);
        if share == 0 {
            continue;
        }
        let mut start = base.clone();
        if k > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(k as u64));
            for &i in &free {
                start[i] += rng.gen_range(-opts.spread..=opts.spread);
            }
        }
        let x0: Vec<f64> = free.iter().map(|&i| start[i]).collect();
        let mut last_error = None;
        let mut start_best: Option<f64> = None;
        let mut objective = |x: &[f64]| -> f64 {
            let mut theta = start.clone();
            for (&i, &v) in free.iter().zip(x) {
                theta[i] = v;
            }
            if theta.iter().any(|v| v.abs() > LOG_THETA_LIMIT) {
                return f64::INFINITY;
            }
            let hp = if theta == base { Ok(init.clone()) } else { Hyperparams::from_log(m, &theta) };
            let fitted = hp.and_then(|hp| problem.fit(&hp, &opts.fit).map(|model| (hp, model)));
            match fitted {
                Ok((hp, model)) => {
                    let ev = model.log_evidence;
                    start_best = Some(start_best.map_or(ev, |b: f64| b.max(ev)));
                    if best.as_ref().map_or(true, |(b, _, _)| ev > *b) {
                        best = Some((ev, hp, model));
                    }
                    -ev
                }
                Err(e) => {
                    last_error = Some(e.to_string());
                    f64::INFINITY
                }
            }
        };
        let (_, _, used) = nelder_mead(&mut objective, &x0, opts.step, share);
        total += used;
        starts.push(StartDiagnostics { start, evaluations: used, best_log_evidence: start_best, last_error });
    }
    match best {
        Some((_, hyperparams, model)) => Ok(SearchOutcome { hyperparams, model, starts, evaluations: total }),
        None => {
            let detail: Vec<String> = starts
                .iter()
                .enumerate()
                .map(|(k, s)| format!("start {k}: {}", s.last_error.as_deref().unwrap_or("no evaluation")))
                .collect();
            Err(IrlError::numerical(format!("every hyperparameter start failed: {}", detail.join("; "))))
        }
    }
}
