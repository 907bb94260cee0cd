//! Discrete-time double integrator along the vehicle's lane.

use nalgebra::{Matrix2, Vector2};

use crate::types::{Control, ControlSequence, VehicleState};

/// Advances one vehicle by one sampling period.
pub fn step(x: VehicleState, u: Control, dt: f64) -> VehicleState {
    let a = u.acceleration;
    VehicleState {
        position: x.position + dt * x.speed + 0.5 * dt * dt * a,
        speed: x.speed + dt * a,
    }
}

/// States at k+1 ..= k+H under `seq`; the initial state is not included.
pub fn rollout(x0: VehicleState, seq: &ControlSequence, dt: f64) -> Vec<VehicleState> {
    rollout_slice(x0, seq.as_slice(), dt)
}

pub(crate) fn rollout_slice(x0: VehicleState, accelerations: &[f64], dt: f64) -> Vec<VehicleState> {
    let mut x = x0;
    accelerations
        .iter()
        .map(|&a| {
            x = step(x, Control::new(a), dt);
            x
        })
        .collect()
}

/// State and input matrices of `x' = A x + B u` with `x = [position, speed]`.
pub fn state_jacobians(dt: f64) -> (Matrix2<f64>, Vector2<f64>) {
    (
        Matrix2::new(1.0, dt, 0.0, 1.0),
        Vector2::new(0.5 * dt * dt, dt),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    fn vs(p: f64, v: f64) -> VehicleState {
        VehicleState::new(p, v)
    }

    #[test]
    fn step_examples() {
        let x = step(vs(-100.0, 20.0), Control::new(0.0), 0.1);
        assert_abs_diff_eq!(x.position, -98.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x.speed, 20.0, epsilon = 1e-12);

        let x = step(vs(-100.0, 20.0), Control::new(1.0), 0.1);
        assert_abs_diff_eq!(x.position, -97.995, epsilon = 1e-12);
        assert_abs_diff_eq!(x.speed, 20.1, epsilon = 1e-12);

        assert_eq!(step(vs(0.0, 0.0), Control::ZERO, 0.1), vs(0.0, 0.0));
    }

    #[test]
    fn rollout_examples() {
        let xs = rollout(vs(0.0, 10.0), &ControlSequence::zeros(2), 0.1);
        assert_abs_diff_eq!(xs[0].position, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(xs[1].position, 2.0, epsilon = 1e-12);
        assert_eq!(xs[1].speed, 10.0);

        let x0 = vs(-37.0, 12.5);
        let one = rollout(x0, &ControlSequence::new(vec![-2.5]), 0.1);
        assert_eq!(one, vec![step(x0, Control::new(-2.5), 0.1)]);

        let xs = rollout(vs(0.0, 0.0), &ControlSequence::new(vec![1.0, 1.0]), 1.0);
        assert_eq!(xs, vec![vs(0.5, 1.0), vs(2.0, 2.0)]);
    }

    #[test]
    fn jacobians_reproduce_step() {
        let (a, b) = state_jacobians(0.1);
        assert_eq!(a, Matrix2::new(1.0, 0.1, 0.0, 1.0));
        assert_abs_diff_eq!(b[0], 0.005, epsilon = 1e-15);
        assert_abs_diff_eq!(b[1], 0.1, epsilon = 1e-15);
        let (_, b1) = state_jacobians(1.0);
        assert_eq!(b1, Vector2::new(0.5, 1.0));

        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        for _ in 0..1000 {
            let dt = rng.random_range(0.01..1.0);
            let x = vs(
                rng.random_range(-200.0..200.0),
                rng.random_range(-5.0..40.0),
            );
            let u = rng.random_range(-10.0..10.0);
            let (a, b) = state_jacobians(dt);
            let lin = a * Vector2::new(x.position, x.speed) + b * u;
            let direct = step(x, Control::new(u), dt);
            assert_abs_diff_eq!(lin[0], direct.position, epsilon = 1e-12);
            assert_abs_diff_eq!(lin[1], direct.speed, epsilon = 1e-12);
        }
    }

    proptest::proptest! {
        #[test]
        fn step_is_affine(p1 in -200.0f64..200.0, v1 in -40.0f64..40.0, a1 in -10.0f64..10.0,
                          p2 in -200.0f64..200.0, v2 in -40.0f64..40.0, a2 in -10.0f64..10.0,
                          dt in 0.01f64..1.0) {
            let lhs = step(vs(p1 + p2, v1 + v2), Control::new(a1 + a2), dt);
            let s1 = step(vs(p1, v1), Control::new(a1), dt);
            let s2 = step(vs(p2, v2), Control::new(a2), dt);
            let s0 = step(vs(0.0, 0.0), Control::ZERO, dt);
            proptest::prop_assert!((lhs.position - (s1.position + s2.position - s0.position)).abs() < 1e-9);
            proptest::prop_assert!((lhs.speed - (s1.speed + s2.speed - s0.speed)).abs() < 1e-9);
        }

        #[test]
        fn coasting_keeps_speed(p in -200.0f64..200.0, v in 0.0f64..40.0, h in 1usize..30) {
            let dt = 0.1;
            let xs = rollout(vs(p, v), &ControlSequence::zeros(h), dt);
            let mut prev = p;
            for x in xs {
                proptest::prop_assert_eq!(x.speed, v);
                proptest::prop_assert!((x.position - prev - dt * v).abs() < 1e-9);
                prev = x.position;
            }
        }
    }
}
