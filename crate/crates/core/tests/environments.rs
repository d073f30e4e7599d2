use irl_core::env::{sample_trajectories_from, steps_to_goal, EnvSpec, GridWorldSpec, MountainCarSpec};
use irl_core::mdp::STOCHASTIC_TOL;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_grids_build_valid_benchmarks(w in 2usize..8, h in 2usize..8, density in 0.0f64..0.3, seed in any::<u64>()) {
        let spec = GridWorldSpec::random(w, h, density, seed).unwrap();
        prop_assert_eq!(&GridWorldSpec::random(w, h, density, seed).unwrap(), &spec);
        let env = EnvSpec::Gridworld(spec.clone()).build().unwrap();
        let n = spec.n_states();
        for a in 0..env.mdp.n_actions() {
            let p = env.mdp.transition(a);
            for s in 0..n {
                prop_assert!((p.row(s).sum() - 1.0).abs() <= STOCHASTIC_TOL);
                for t in 0..n {
                    if spec.is_obstacle(t) {
                        prop_assert!(p[(s, t)] == 0.0 || s == t);
                    }
                }
            }
        }
        for s in 0..n {
            prop_assert!(env.features(s).iter().all(|x| (0.0..=1.0).contains(x)));
        }
        // The teacher reaches the goal from every free cell.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for &s in &env.starts {
            prop_assert!(steps_to_goal(&env.mdp, &env.teacher, s, &env.goals, 50 * (w + h), &mut rng).is_some());
        }
    }

    #[test]
    fn demonstrations_follow_the_teacher(seed in any::<u64>(), count in 0usize..6) {
        let env = EnvSpec::Gridworld(GridWorldSpec::random(5, 5, 0.1, seed).unwrap()).build().unwrap();
        let trajs = sample_trajectories_from(&env.mdp, &env.teacher, count, 30, seed, &env.starts, &env.goals).unwrap();
        prop_assert_eq!(trajs.len(), count);
        for t in &trajs {
            prop_assert!(!t.is_empty() && t.len() <= 30);
            prop_assert!(t.steps.iter().all(|&(s, a)| env.teacher.action(s) == a));
            prop_assert!(t.support_warnings(&env.mdp).is_empty());
            let goal_positions: Vec<usize> = (0..t.len()).filter(|&i| env.is_goal(t.steps[i].0)).collect();
            prop_assert!(goal_positions.is_empty() || goal_positions == vec![t.len() - 1]);
        }
    }
}

#[test]
fn mountain_car_presets_reach_the_goal() {
    for spec in [MountainCarSpec::sixty(), MountainCarSpec::one_twenty()] {
        let env = EnvSpec::MountainCar(spec.clone()).build().unwrap();
        assert_eq!(env.mdp.n_states(), spec.n_states());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let start = spec.valley_rest_state();
        let steps = steps_to_goal(&env.mdp, &env.teacher, start, &env.goals, 500, &mut rng);
        assert!(steps.is_some_and(|k| k > 1), "{}: {steps:?}", env.spec.name());
    }
}

#[test]
fn specs_round_trip_through_json() {
    for spec in [EnvSpec::Gridworld(GridWorldSpec::random(6, 4, 0.2, 9).unwrap()), EnvSpec::MountainCar(MountainCarSpec::sixty())] {
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<EnvSpec>(&text).unwrap(), spec);
    }
}
