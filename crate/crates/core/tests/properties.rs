//! Randomized invariant checks over the library's small algebraic pieces.

use beltkit::entropy_maze::{canonical_expert, fit_student, generate_demos, DemoConfig,
    MazeState};
use beltkit::geom;
use beltkit::mixture_policy::{log_density, GaussianMixture, MixtureComponent};
use beltkit::seed;
use proptest::prelude::*;

proptest! {
    #[test]
    fn wrap_angle_lands_in_half_open_interval(angle in -1e4f64..1e4) {
        let wrapped = geom::wrap_angle(angle);
        prop_assert!(wrapped > -std::f64::consts::PI && wrapped <= std::f64::consts::PI);
        // Wrapping preserves the angle modulo a full turn.
        let turns = (angle - wrapped) / (2.0 * std::f64::consts::PI);
        prop_assert!((turns - turns.round()).abs() < 1e-6);
    }

    #[test]
    fn clamp_norm_bounds_and_is_idempotent(
        x in -10f64..10.0, y in -10f64..10.0, z in -10f64..10.0, max in 0.01f64..5.0
    ) {
        let clamped = geom::clamp_norm([x, y, z], max);
        prop_assert!(geom::norm(clamped) <= max + 1e-12);
        let twice = geom::clamp_norm(clamped, max);
        for axis in 0..3 {
            prop_assert!((clamped[axis] - twice[axis]).abs() < 1e-12);
        }
    }

    #[test]
    fn seed_derivation_is_order_sensitive(base in any::<u64>(), a in any::<u64>(), b in any::<u64>()) {
        prop_assume!(a != b);
        prop_assert_ne!(seed::derive(base, &[a, b]), seed::derive(base, &[b, a]));
    }

    #[test]
    fn student_probabilities_sum_to_one(
        demo_seed in any::<u64>(), eta in 0f64..1.0, smoothing in 1e-6f64..1.0
    ) {
        let config = DemoConfig {
            eta,
            num_trajectories: 5,
            seed: demo_seed,
            ..Default::default()
        };
        let demos = generate_demos(&canonical_expert(), &config).unwrap();
        let student = fit_student(&demos).unwrap();
        for row in 0..5 {
            for col in 0..5 {
                let probs = student.probs(&MazeState { row, col, nuisance: 1 }, smoothing);
                let total: f64 = probs.iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mixture_density_is_permutation_invariant(
        m1 in -2f64..2.0, m2 in -2f64..2.0, w in 0.05f64..0.95, x in -3f64..3.0
    ) {
        let forward = GaussianMixture {
            components: vec![
                MixtureComponent { weight: w, mean: vec![m1], variance: vec![0.2] },
                MixtureComponent { weight: 1.0 - w, mean: vec![m2], variance: vec![0.5] },
            ],
        };
        let reversed = GaussianMixture {
            components: forward.components.iter().rev().cloned().collect(),
        };
        let a = log_density(&forward, &[x]).unwrap();
        let b = log_density(&reversed, &[x]).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }
}
