mod common;

use common::{random_mdp, rng, uniform_vec};
use irl_core::env::{gridworld_mdp, sample_successor, GridWorldSpec};
use irl_core::mdp::DEFAULT_VI_TOL;
use irl_core::{constraint_operator, Mdp, MdpDocument, Policy, Reward};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::Rng;

fn all_policies(n: usize, m: usize) -> impl Iterator<Item = Policy> {
    (0..m.pow(n as u32)).map(move |mut code| {
        Policy(
            (0..n)
                .map(|_| {
                    let a = code % m;
                    code /= m;
                    a
                })
                .collect(),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn policy_evaluation_solves_bellman(seed in any::<u64>(), n in 1usize..7, m in 1usize..4, gamma in 0.0f64..0.97) {
        let mut r = rng(seed);
        let mdp = random_mdp(&mut r, n, m, gamma).with_reward(Reward::State(uniform_vec(&mut r, n, -1.0, 1.0))).unwrap();
        let pi = Policy((0..n).map(|_| r.gen_range(0..m)).collect());
        let v = mdp.policy_evaluation(&pi).unwrap().0;
        let rhs = DVector::from_column_slice(mdp.reward().unwrap().as_slice())
            + mdp.policy_transition(&pi).unwrap() * &v * gamma;
        prop_assert!((v - rhs).amax() < 1e-9);
    }

    #[test]
    fn value_iteration_is_optimal(seed in any::<u64>(), n in 1usize..7, m in 1usize..4, gamma in 0.0f64..0.95) {
        let mut r = rng(seed);
        let mdp = random_mdp(&mut r, n, m, gamma).with_reward(Reward::State(uniform_vec(&mut r, n, -1.0, 1.0))).unwrap();
        let (v, pi, _) = mdp.value_iteration(DEFAULT_VI_TOL).unwrap();
        prop_assert!(mdp.bellman_optimality_check(&pi, 1e-8).unwrap());
        let exact = mdp.policy_evaluation(&pi).unwrap();
        prop_assert!((v.0 - exact.0).amax() < 1e-8);
    }

    #[test]
    fn reward_scaling_scales_values(seed in any::<u64>(), n in 1usize..6, scale in 0.1f64..10.0) {
        let mut r = rng(seed);
        let base = random_mdp(&mut r, n, 2, 0.8);
        let reward = uniform_vec(&mut r, n, -1.0, 1.0);
        let pi = Policy(vec![0; n]);
        let v1 = base.with_reward(Reward::State(reward.clone())).unwrap().policy_evaluation(&pi).unwrap().0;
        let v2 = base.with_reward(Reward::State(reward * scale)).unwrap().policy_evaluation(&pi).unwrap().0;
        prop_assert!((v1 * scale - v2).amax() < 1e-9);
    }

    #[test]
    fn constraint_operator_sign_matches_greedy(seed in any::<u64>(), n in 1usize..5, m in 1usize..4, gamma in 0.05f64..0.95) {
        let mut r = rng(seed);
        let base = random_mdp(&mut r, n, m, gamma);
        let reward = uniform_vec(&mut r, n, -1.0, 1.0);
        let mdp = base.with_reward(Reward::State(reward.clone())).unwrap();
        let (_, pi, _) = mdp.value_iteration(DEFAULT_VI_TOL).unwrap();
        // Random policy half the time, the optimal one otherwise.
        let pi = if r.gen::<bool>() { Policy((0..n).map(|_| r.gen_range(0..m)).collect()) } else { pi };
        let g = constraint_operator(&base, &pi).unwrap();
        let margins = &g * &reward * gamma;
        let q = mdp.q_factors(&mdp.policy_evaluation(&pi).unwrap()).unwrap();
        for s in 0..n {
            for a in 0..m {
                let gap = q.get(s, pi.action(s)) - q.get(s, a);
                prop_assert!((margins[a * n + s] - gap).abs() < 1e-9);
            }
        }
        let nonneg = margins.iter().all(|&x| x >= -1e-10);
        prop_assert_eq!(nonneg, mdp.bellman_optimality_check(&pi, 1e-10).unwrap());
    }

    #[test]
    fn document_round_trip(seed in any::<u64>(), n in 1usize..5, m in 1usize..4, state_action in any::<bool>()) {
        let mut r = rng(seed);
        let len = if state_action { n * m } else { n };
        let reward = uniform_vec(&mut r, len, -1.0, 1.0);
        let reward = if state_action { Reward::StateAction(reward) } else { Reward::State(reward) };
        let mdp = random_mdp(&mut r, n, m, 0.9).with_reward(reward).unwrap();
        let doc = MdpDocument { mdp, features: None };
        let back = MdpDocument::from_json(&doc.to_json().unwrap()).unwrap();
        // With one action the two reward layouts coincide.
        let (a, b) = (back.mdp.reward().unwrap(), doc.mdp.reward().unwrap());
        for s in 0..n {
            for act in 0..m {
                prop_assert_eq!(a.value(n, s, act), b.value(n, s, act));
            }
        }
        for a in 0..m {
            prop_assert_eq!(back.mdp.transition(a), doc.mdp.transition(a));
        }
    }
}

#[test]
fn three_by_three_grid_matches_enumeration() {
    let spec = GridWorldSpec::open(3, 3, (2, 2));
    let mdp = gridworld_mdp(&spec).unwrap();
    let (v, pi, _) = mdp.value_iteration(DEFAULT_VI_TOL).unwrap();
    let mut best = DVector::from_element(9, f64::NEG_INFINITY);
    for policy in all_policies(9, 5) {
        let vp = mdp.policy_evaluation(&policy).unwrap().0;
        for s in 0..9 {
            best[s] = best[s].max(vp[s]);
        }
    }
    assert!((&v.0 - &best).amax() < 1e-8, "VI {v:?} vs enumeration {best:?}");
    let vpi = mdp.policy_evaluation(&pi).unwrap().0;
    assert!((vpi - best).amax() < 1e-8);
}

#[test]
fn sampled_successors_match_transition_rows() {
    let spec = GridWorldSpec::open(3, 3, (2, 2));
    let mdp = gridworld_mdp(&spec).unwrap();
    let mut r = rng(11);
    let draws = 100_000;
    for (s, a) in [(4, 1), (0, 2), (8, 0)] {
        let mut counts = [0usize; 9];
        for _ in 0..draws {
            counts[sample_successor(&mdp, s, a, &mut r)] += 1;
        }
        for (t, &c) in counts.iter().enumerate() {
            let p = mdp.transition(a)[(s, t)];
            let freq = c as f64 / draws as f64;
            let se = (p * (1.0 - p) / draws as f64).sqrt();
            assert!((freq - p).abs() <= 3.0 * se + 1e-12, "state {s} action {a} successor {t}: {freq} vs {p}");
        }
    }
}

#[test]
fn constraint_rows_vanish_for_the_chosen_action() {
    let mut r = rng(3);
    let mdp: Mdp = random_mdp(&mut r, 4, 3, 0.9);
    let pi = Policy(vec![0, 1, 2, 1]);
    let g = constraint_operator(&mdp, &pi).unwrap();
    for s in 0..4 {
        assert!(g.row(pi.action(s) * 4 + s).amax() < 1e-12);
    }
}
