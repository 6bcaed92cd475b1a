use cdpr::dynamics::{acceleration, step_with_contact};
use cdpr::env::{Action, ActionSpec, CdprEnv, EpisodeConfig, RewardConfig};
use cdpr::geometry::{cable_lengths, jacobian, NUM_CABLES};
use cdpr::neural::{flatten, kl_divergence, unflatten, ActionDist, HeadKind, MlpSpec};
use cdpr::rl::{random_action, ReplayBuffer, Transition};
use cdpr::trajectory::rms_error;
use cdpr::{CableTensions, DynamicsParams, EndEffectorState, Pose, RobotGeometry, Vec3};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn workspace_point() -> impl Strategy<Value = Vec3> {
    let g = RobotGeometry::default();
    let (lo, hi) = (g.workspace_min(), g.workspace_max());
    (lo.x..hi.x, lo.y..hi.y, lo.z..hi.z).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn tensions(max: f64) -> impl Strategy<Value = [f64; NUM_CABLES]> {
    proptest::array::uniform4(0.0..max)
}

proptest! {
    #[test]
    fn lengths_are_translation_equivariant(p in workspace_point(), dx in -5.0..5.0f64, dy in -5.0..5.0f64, dz in -5.0..5.0f64) {
        let g = RobotGeometry::default();
        let shift = Vec3::new(dx, dy, dz);
        let anchors = g.anchors().map(|a| a + shift);
        let moved = RobotGeometry::new(anchors, g.workspace_min() + shift, g.workspace_max() + shift).unwrap();
        let a = cable_lengths(&g, &Pose::at(p));
        let b = cable_lengths(&moved, &Pose::at(p + shift));
        for i in 0..NUM_CABLES {
            prop_assert!((a[i] - b[i]).abs() < 1e-9);
        }
        let ja = jacobian(&g, &Pose::at(p)).unwrap();
        let jb = jacobian(&moved, &Pose::at(p + shift)).unwrap();
        for i in 0..NUM_CABLES {
            prop_assert!((ja.rows[i] - jb.rows[i]).norm() < 1e-9);
        }
    }

    #[test]
    fn acceleration_is_affine_in_tension(p in workspace_point(), t1 in tensions(20.0), t2 in tensions(20.0), k in 0.0..3.0f64) {
        let g = RobotGeometry::default();
        let params = DynamicsParams::default();
        let s = EndEffectorState::at_rest(p);
        let acc = |t: [f64; 4]| acceleration(&g, &params, &s, &CableTensions(t)).unwrap();
        let grav = acc([0.0; 4]);
        let sum: [f64; 4] = std::array::from_fn(|i| t1[i] + k * t2[i]);
        let lhs = acc(sum) - grav;
        let rhs = (acc(t1) - grav) + (acc(t2) - grav) * k;
        prop_assert!((lhs - rhs).norm() < 1e-9);
    }

    #[test]
    fn integrator_respects_the_workspace(p in workspace_point(), vx in -10.0..10.0f64, vy in -10.0..10.0f64, vz in -10.0..10.0f64, t in tensions(20.0)) {
        let g = RobotGeometry::default();
        let params = DynamicsParams::default();
        let s = EndEffectorState { position: p, velocity: Vec3::new(vx, vy, vz) };
        let out = step_with_contact(&g, &params, &s, &CableTensions(t)).unwrap();
        prop_assert!(g.workspace_contains(&out.state.position));
        let (lo, hi) = (g.workspace_min(), g.workspace_max());
        for k in 0..3 {
            let on_face = out.state.position[k] == lo[k] || out.state.position[k] == hi[k];
            if on_face && out.contact {
                let v = out.state.velocity[k];
                prop_assert!(v == 0.0 || (out.state.position[k] == lo[k] && v > 0.0) || (out.state.position[k] == hi[k] && v < 0.0));
            }
        }
    }

    #[test]
    fn improvement_terms_telescope(seed in 0u64..1000, discrete in any::<bool>()) {
        let spec = if discrete { ActionSpec::Discrete { levels: 5 } } else { ActionSpec::Continuous };
        let g = RobotGeometry::default();
        let reward = RewardConfig::for_geometry(&g);
        let episode = EpisodeConfig { max_steps: 60, rng_seed: seed, ..EpisodeConfig::default() };
        let mut env = CdprEnv::new(g, DynamicsParams::default(), spec, reward, episode).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        env.reset();
        let d_first = env.distance().unwrap();
        let mut sum = 0.0;
        loop {
            let a: Action = random_action(&spec, &mut rng);
            let r = env.step(&a).unwrap();
            sum += r.terms.improvement;
            if r.done() {
                break;
            }
        }
        let d_last = env.distance().unwrap();
        prop_assert!((sum - reward.w_improve * (d_first - d_last)).abs() < 1e-9);
    }

    #[test]
    fn rms_is_permutation_invariant_and_homogeneous(mut e in proptest::collection::vec(0.0..5.0f64, 1..40), k in 0.0..10.0f64, seed in any::<u64>()) {
        let base = rms_error(&e).unwrap();
        let scaled: Vec<f64> = e.iter().map(|x| k * x).collect();
        prop_assert!((rms_error(&scaled).unwrap() - k * base).abs() <= 1e-12 * (1.0 + k * base));
        use rand::seq::SliceRandom;
        e.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!((rms_error(&e).unwrap() - base).abs() <= 1e-12 * (1.0 + base));
    }

    #[test]
    fn flatten_round_trips(hidden in proptest::collection::vec(1usize..8, 0..3), input in 1usize..6, output in 1usize..5, seed in any::<u64>()) {
        let spec = MlpSpec::new(input, hidden, output).unwrap();
        let params = spec.init_params(&mut ChaCha8Rng::seed_from_u64(seed), 1.0);
        let layers = unflatten(&spec, &params).unwrap();
        prop_assert_eq!(flatten(&layers), params);
    }

    #[test]
    fn gaussian_kl_is_nonnegative(m1 in proptest::array::uniform4(-3.0..3.0f64), m2 in proptest::array::uniform4(-3.0..3.0f64), s1 in proptest::array::uniform4(-5.0..2.0f64), s2 in proptest::array::uniform4(-5.0..2.0f64)) {
        let head = HeadKind::SquashedGaussian { dim: 4 };
        let a = ActionDist::new(head, &m1, &s1).unwrap();
        let b = ActionDist::new(head, &m2, &s2).unwrap();
        prop_assert!(kl_divergence(&a, &b) >= 0.0);
        prop_assert!(kl_divergence(&a, &a).abs() < 1e-12);
    }

    #[test]
    fn categorical_kl_is_nonnegative(l1 in proptest::collection::vec(-5.0..5.0f64, 12), l2 in proptest::collection::vec(-5.0..5.0f64, 12)) {
        let head = HeadKind::Categorical { groups: 4, levels: 3 };
        let a = ActionDist::new(head, &l1, &[]).unwrap();
        let b = ActionDist::new(head, &l2, &[]).unwrap();
        prop_assert!(kl_divergence(&a, &b) >= -1e-12);
    }

    #[test]
    fn replay_keeps_the_newest_in_order(capacity in 1usize..20, pushes in 0usize..60) {
        let mut buf = ReplayBuffer::new(capacity);
        for i in 0..pushes {
            buf.push(Transition { obs: vec![i as f64], action: vec![], reward: i as f64, next_obs: vec![], terminated: false });
        }
        let got: Vec<f64> = buf.iter_ordered().map(|t| t.reward).collect();
        let start = pushes.saturating_sub(capacity);
        let want: Vec<f64> = (start..pushes).map(|i| i as f64).collect();
        prop_assert_eq!(got, want);
    }
}
