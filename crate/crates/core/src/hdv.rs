//! Synthetic human driver: a best responder to its own SVO-weighted
//! objective with a hidden ground-truth SVO angle.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dynamics;
use crate::error::{Error, Result};
use crate::objectives::{hdv_stage_response, Player};
use crate::solver::{best_response, SolverOptions};
use crate::types::{
    check_svo_angle, Control, ControlSequence, ScenarioConfig, SvoPair, VehicleState,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HdvPolicy {
    true_phi2: f64,
    horizon: usize,
    noise_std: f64,
}

impl HdvPolicy {
    pub fn new(true_phi2: f64) -> Result<Self> {
        check_svo_angle("true_phi2", true_phi2)?;
        Ok(Self {
            true_phi2,
            horizon: 1,
            noise_std: 0.0,
        })
    }

    /// Number of steps the driver looks ahead (default 1).
    pub fn with_horizon(mut self, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Precondition(
                "HDV lookahead must be at least one step".into(),
            ));
        }
        self.horizon = horizon;
        Ok(self)
    }

    /// Standard deviation of additive Gaussian action noise (default 0).
    pub fn with_noise(mut self, noise_std: f64) -> Result<Self> {
        if !(noise_std >= 0.0 && noise_std.is_finite()) {
            return Err(Error::Precondition(format!(
                "noise_std must be finite and >= 0, got {noise_std}"
            )));
        }
        self.noise_std = noise_std;
        Ok(self)
    }

    pub fn true_phi2(&self) -> f64 {
        self.true_phi2
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }
}

/// Acceleration chosen by the synthetic driver.
///
/// The driver assumes the CAV keeps `cav_predicted_u1` over its lookahead
/// and minimizes `l2·cos φ2 + l12·sin φ2`. Outside the control zone it holds
/// its speed. Noise is drawn from `rng` only when `noise_std > 0`.
pub fn hdv_action<R: Rng + ?Sized>(
    policy: &HdvPolicy,
    x1: VehicleState,
    x2: VehicleState,
    cav_predicted_u1: Control,
    cfg: &ScenarioConfig,
    rng: &mut R,
) -> Control {
    if !cfg.in_control_zone(x2.position) {
        return Control::ZERO;
    }
    let x1_next = dynamics::step(x1, cav_predicted_u1, cfg.dt);
    let one_step = hdv_stage_response(x1_next, x2, policy.true_phi2, cfg);
    let mut a = if policy.horizon == 1 {
        one_step.acceleration
    } else {
        lookahead_action(policy, x1, x2, cav_predicted_u1, one_step, cfg)
            .unwrap_or(one_step.acceleration)
    };
    if policy.noise_std > 0.0 {
        let normal = Normal::new(0.0, policy.noise_std).expect("validated noise level");
        a += normal.sample(rng);
    }
    Control::new(a)
}

fn lookahead_action(
    policy: &HdvPolicy,
    x1: VehicleState,
    x2: VehicleState,
    u1: Control,
    seed: Control,
    cfg: &ScenarioConfig,
) -> Result<f64> {
    let mut local = cfg.clone();
    local.horizon = policy.horizon;
    // only φ2 enters the HDV's own objective
    let svo = SvoPair::new(std::f64::consts::FRAC_PI_4, policy.true_phi2)?;
    let frozen = ControlSequence::constant(policy.horizon, u1.acceleration);
    let initial = ControlSequence::constant(policy.horizon, seed.acceleration);
    let plan = best_response(
        Player::Hdv,
        &frozen,
        x1,
        x2,
        &svo,
        &local,
        &SolverOptions::default(),
        Some(&initial),
    )?;
    Ok(plan.as_slice()[0])
}
