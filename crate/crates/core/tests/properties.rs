mod common;

use proptest::prelude::*;
use svo_core::objectives::{horizon_potential, horizon_potential_gradient};
use svo_core::solver::{solve, SolverOptions};
use svo_core::{default_config, dynamics, ControlSequence, SvoPair, VehicleState};

fn svo_angle() -> impl Strategy<Value = f64> {
    0.05..(std::f64::consts::FRAC_PI_2 - 0.05)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn potential_matches_reference(
        p1 in -120.0..40.0f64, v1 in 0.0..30.0f64, p2 in -120.0..40.0f64, v2 in 0.0..30.0f64,
        phi1 in svo_angle(), phi2 in svo_angle(),
        s1 in prop::collection::vec(-10.0..5.0f64, 20), s2 in prop::collection::vec(-10.0..10.0f64, 20),
    ) {
        let cfg = default_config();
        let svo = SvoPair::new(phi1, phi2).unwrap();
        let lib = horizon_potential(
            VehicleState::new(p1, v1), VehicleState::new(p2, v2),
            &ControlSequence::new(s1.clone()), &ControlSequence::new(s2.clone()), &svo, &cfg,
        );
        let reference = common::potential(phi1, phi2, (p1, v1), (p2, v2), &s1, &s2, &cfg);
        prop_assert!((lib - reference).abs() <= 1e-12 * reference.abs());
    }

    #[test]
    fn gradient_is_a_descent_direction(
        p1 in -90.0..-30.0f64, v1 in 5.0..30.0f64, p2 in -90.0..-30.0f64, v2 in 5.0..30.0f64,
        phi1 in svo_angle(), phi2 in svo_angle(),
        s1 in prop::collection::vec(-3.0..3.0f64, 20), s2 in prop::collection::vec(-3.0..3.0f64, 20),
    ) {
        let cfg = default_config();
        let svo = SvoPair::new(phi1, phi2).unwrap();
        let (x1, x2) = (VehicleState::new(p1, v1), VehicleState::new(p2, v2));
        let (a, b) = (ControlSequence::new(s1.clone()), ControlSequence::new(s2.clone()));
        let (g1, g2) = horizon_potential_gradient(x1, x2, &a, &b, &svo, &cfg);
        let norm2: f64 = g1.iter().chain(&g2).map(|g| g * g).sum();
        prop_assume!(norm2 > 1e-8);
        let t = 1e-4 / norm2.sqrt();
        let step = |s: &[f64], g: &[f64]| s.iter().zip(g).map(|(x, d)| x - t * d).collect::<Vec<_>>();
        let f0 = common::potential(phi1, phi2, (p1, v1), (p2, v2), &s1, &s2, &cfg);
        let f1 = common::potential(phi1, phi2, (p1, v1), (p2, v2), &step(&s1, &g1), &step(&s2, &g2), &cfg);
        prop_assert!(f1 < f0);
    }

    #[test]
    fn solve_respects_cav_bounds(
        p1 in -100.0..-10.0f64, v1 in 0.0..30.0f64, p2 in -100.0..-10.0f64, v2 in 0.0..30.0f64,
        phi1 in svo_angle(), phi2 in svo_angle(),
    ) {
        let cfg = default_config();
        let svo = SvoPair::new(phi1, phi2).unwrap();
        let x1 = VehicleState::new(p1, v1);
        let sol = solve(x1, VehicleState::new(p2, v2), &svo, &cfg, None, &SolverOptions::default()).unwrap();
        prop_assert!(sol.seq1.iter().all(|u| u.acceleration >= cfg.u_min && u.acceleration <= cfg.u_max));
        for x in dynamics::rollout(x1, &sol.seq1, cfg.dt) {
            prop_assert!(x.speed >= cfg.v_min - 1e-6 && x.speed <= cfg.v_max + 1e-6);
        }
        let zeros = ControlSequence::zeros(cfg.horizon);
        let start = horizon_potential(x1, VehicleState::new(p2, v2), &zeros, &zeros, &svo, &cfg);
        prop_assert!(sol.objective <= start * (1.0 + 1e-12));
    }
}
