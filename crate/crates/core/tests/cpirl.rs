mod common;

use common::{random_mdp, rng, uniform_vec};
use irl_core::cpirl::{
    complete_partial_policy, observed_constraints, posterior_mode, solve_map_qp, solve_map_qp_report, CpirlSettings,
    GaussianPrior, QpProblem,
};
use irl_core::mdp::DEFAULT_VI_TOL;
use irl_core::qp::phase_one;
use irl_core::{DecisionMap, IrlError, Mdp, Reward};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

fn random_spd(r: &mut impl Rng, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| r.gen_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(n, n) * 0.3
}

/// Full-policy constraint rows for a reward drawn so that they hold with room to spare.
fn feasible_rows(r: &mut impl Rng, n: usize, m: usize) -> (Mdp, DMatrix<f64>) {
    loop {
        let mdp = random_mdp(r, n, m, 0.9);
        let reward = uniform_vec(r, n, -0.9, 0.9);
        let (_, pi, _) = mdp.with_reward(Reward::State(reward.clone())).unwrap().value_iteration(DEFAULT_VI_TOL).unwrap();
        let obs = DecisionMap::new((0..n).map(|s| (s, pi.action(s))).collect());
        let rows = observed_constraints(&mdp, &complete_partial_policy(&mdp, &obs).unwrap()).unwrap().matrix;
        if rows.nrows() == 0 || (&rows * &reward).min() > 5e-3 {
            return (mdp, rows);
        }
    }
}

/// Brute force over a 0.005 grid of the whole box, then finer grids ten
/// steps either side of the best feasible point.
fn grid_minimizer(problem: &QpProblem, prior: &GaussianPrior) -> [f64; 3] {
    assert_eq!(problem.dim(), 3);
    let p = prior.precision();
    let mu = prior.mean();
    let g = &problem.constraint_matrix;
    let energy = |x: &[f64; 3]| {
        let d = [x[0] - mu[0], x[1] - mu[1], x[2] - mu[2]];
        let mut e = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                e += d[i] * p[(i, j)] * d[j];
            }
        }
        0.5 * e
    };
    let feasible = |x: &[f64; 3]| (0..g.nrows()).all(|k| g[(k, 0)] * x[0] + g[(k, 1)] * x[1] + g[(k, 2)] * x[2] >= problem.margin);
    let mut lo = [problem.r_min[0], problem.r_min[1], problem.r_min[2]];
    let mut hi = [problem.r_max[0], problem.r_max[1], problem.r_max[2]];
    let mut best = [0.0; 3];
    for (step, window) in [(5e-3, 5e-2), (5e-4, 5e-3), (5e-5, 5e-4), (5e-6, 0.0)] {
        let count: Vec<usize> = (0..3).map(|i| ((hi[i] - lo[i]) / step).round() as usize + 1).collect();
        let mut found: Option<(f64, [f64; 3])> = None;
        for a in 0..count[0] {
            for b in 0..count[1] {
                for c in 0..count[2] {
                    let x = [
                        (lo[0] + a as f64 * step).min(hi[0]),
                        (lo[1] + b as f64 * step).min(hi[1]),
                        (lo[2] + c as f64 * step).min(hi[2]),
                    ];
                    if feasible(&x) {
                        let e = energy(&x);
                        if found.map_or(true, |(f, _)| e < f) {
                            found = Some((e, x));
                        }
                    }
                }
            }
        }
        best = found.expect("grid has a feasible point").1;
        for i in 0..3 {
            lo[i] = (best[i] - window).max(problem.r_min[i]);
            hi[i] = (best[i] + window).min(problem.r_max[i]);
        }
    }
    best
}

/// Exact minimizer by enumerating active sets: the best feasible solution of
/// the equality-constrained problem on every face of the polytope.
fn active_set_minimizer(problem: &QpProblem, prior: &GaussianPrior) -> DVector<f64> {
    let n = problem.dim();
    let g = &problem.constraint_matrix;
    // Constraints aᵀx ≥ b: margin rows, then lower and upper bounds.
    let mut a: Vec<DVector<f64>> = (0..g.nrows()).map(|k| g.row(k).transpose()).collect();
    let mut b: Vec<f64> = vec![problem.margin; g.nrows()];
    for i in 0..n {
        a.push(DVector::from_fn(n, |j, _| if i == j { 1.0 } else { 0.0 }));
        b.push(problem.r_min[i]);
        a.push(DVector::from_fn(n, |j, _| if i == j { -1.0 } else { 0.0 }));
        b.push(-problem.r_max[i]);
    }
    let p = prior.precision();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << a.len()) {
        let active: Vec<usize> = (0..a.len()).filter(|&k| mask & (1 << k) != 0).collect();
        if active.len() > n {
            continue;
        }
        let k = active.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&p);
        let mut rhs = DVector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(&(&p * prior.mean()));
        for (row, &c) in active.iter().enumerate() {
            for j in 0..n {
                kkt[(n + row, j)] = a[c][j];
                kkt[(j, n + row)] = a[c][j];
            }
            rhs[n + row] = b[c];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        let x = sol.rows(0, n).into_owned();
        if a.iter().zip(&b).all(|(ak, bk)| ak.dot(&x) >= bk - 1e-12) {
            let e = prior.energy(&x);
            if best.as_ref().map_or(true, |(f, _)| e < *f) {
                best = Some((e, x));
            }
        }
    }
    best.expect("feasible problem").1
}

#[test]
fn three_state_qp_matches_brute_force() {
    for seed in 0..4 {
        let mut r = rng(100 + seed);
        let (_, rows) = feasible_rows(&mut r, 3, 2);
        let problem = QpProblem::with_box(rows, 1e-3, -1.0, 1.0).unwrap();
        // A mean well outside the box pushes the mode onto active constraints.
        let prior = GaussianPrior::new(uniform_vec(&mut r, 3, -2.0, 2.0), random_spd(&mut r, 3)).unwrap();
        let sol = solve_map_qp(&problem, &prior).unwrap();
        let grid = prior.energy(&DVector::from_row_slice(&grid_minimizer(&problem, &prior)));
        assert!(sol.objective <= grid + 1e-6 && grid - sol.objective < 1e-4, "seed {seed}: {} vs grid {grid}", sol.objective);
        let exact = active_set_minimizer(&problem, &prior);
        for i in 0..3 {
            assert!((sol.reward[i] - exact[i]).abs() < 1e-6, "seed {seed}: {:?} vs {exact:?}", sol.reward);
        }
    }
}

#[test]
fn random_feasible_problems_satisfy_kkt() {
    let mut r = rng(7);
    for k in 0..100 {
        let n = r.gen_range(2..7);
        let m = r.gen_range(2..4);
        let (_, rows) = feasible_rows(&mut r, n, m);
        let problem = QpProblem::with_box(rows, 1e-3, -1.0, 1.0).unwrap();
        let prior = GaussianPrior::new(uniform_vec(&mut r, n, -1.5, 1.5), random_spd(&mut r, n)).unwrap();
        let report = solve_map_qp_report(&problem, &prior).unwrap();
        assert!(report.kkt.max() < 1e-6, "problem {k}: {:?}", report.kkt);
        let x = DVector::from_vec(report.solution.reward.clone());
        assert!((&problem.constraint_matrix * &x).iter().all(|&v| v >= problem.margin - 1e-9));
    }
}

#[test]
fn recovered_reward_makes_observations_optimal() {
    let mut r = rng(21);
    for _ in 0..10 {
        let n = r.gen_range(2..6);
        let (mdp, _) = feasible_rows(&mut r, n, 2);
        let truth = uniform_vec(&mut r, n, -0.9, 0.9);
        let rewarded = mdp.with_reward(Reward::State(truth.clone())).unwrap();
        let (_, pi, _) = rewarded.value_iteration(DEFAULT_VI_TOL).unwrap();
        let obs = DecisionMap::new((0..n).map(|s| (s, pi.action(s))).collect());
        let sol = match posterior_mode(&mdp, &obs, &GaussianPrior::standard(n), &CpirlSettings::default()) {
            Ok(sol) => sol,
            // Near-tied states can leave no room for the margin.
            Err(IrlError::Infeasible { .. }) => continue,
            Err(e) => panic!("{e}"),
        };
        let learned = mdp.with_reward(Reward::State(DVector::from_vec(sol.reward))).unwrap();
        assert!(learned.bellman_optimality_check(&pi, 1e-9).unwrap());
    }
}

#[test]
fn contradictory_rows_are_infeasible() {
    let g = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
    let problem = QpProblem::with_box(g, 1e-3, -1.0, 1.0).unwrap();
    assert!(matches!(solve_map_qp(&problem, &GaussianPrior::standard(2)), Err(IrlError::Infeasible { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn phase_one_points_are_strictly_feasible(seed in any::<u64>(), n in 2usize..6, m in 2usize..4) {
        let mut r = rng(seed);
        let (_, rows) = feasible_rows(&mut r, n, m);
        let lo = DVector::from_element(n, -1.0);
        let hi = DVector::from_element(n, 1.0);
        let x = phase_one(&rows, 1e-3, &lo, &hi, -5e-4).unwrap();
        prop_assert!((&rows * &x).iter().all(|&v| v > 1e-3));
        prop_assert!(x.iter().all(|&v| v > -1.0 && v < 1.0));
    }

    #[test]
    fn mode_objective_never_exceeds_a_feasible_point(seed in any::<u64>(), n in 2usize..6) {
        let mut r = rng(seed);
        let (_, rows) = feasible_rows(&mut r, n, 2);
        let problem = QpProblem::with_box(rows.clone(), 1e-3, -1.0, 1.0).unwrap();
        let prior = GaussianPrior::new(uniform_vec(&mut r, n, -1.0, 1.0), random_spd(&mut r, n)).unwrap();
        let sol = solve_map_qp(&problem, &prior).unwrap();
        let probe = phase_one(&rows, 1e-3, &problem.r_min, &problem.r_max, -5e-4).unwrap();
        prop_assert!(sol.objective <= prior.energy(&probe) + 1e-9);
    }
}
