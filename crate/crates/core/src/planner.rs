//! Receding-horizon controller for the CAV.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::solver::{solve, SolverOptions, SolverResult};
use crate::types::{
    check_svo_angle, Control, ControlSequence, ScenarioConfig, SvoPair, VehicleState,
};

/// CAV SVO chosen as the complement of the HDV estimate: the more egoistic
/// the human appears, the more the CAV yields.
pub fn adapt_cav_svo(phi2_estimate: f64) -> Result<f64> {
    check_svo_angle("phi2_estimate", phi2_estimate)?;
    Ok(FRAC_PI_2 - phi2_estimate)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerState {
    pub previous_solution: Option<(ControlSequence, ControlSequence)>,
    pub current_svo: SvoPair,
}

impl Default for PlannerState {
    fn default() -> Self {
        Self {
            previous_solution: None,
            current_svo: SvoPair::new(std::f64::consts::FRAC_PI_4, std::f64::consts::FRAC_PI_4)
                .expect("pi/4 is a valid SVO angle"),
        }
    }
}

/// Output of one planning step.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanStep {
    pub u1_apply: Control,
    pub predicted_hdv_seq: ControlSequence,
    pub new_state: PlannerState,
    pub solution: SolverResult,
}

/// Solves the joint horizon problem at the current states and returns the
/// CAV's first action and the predicted HDV sequence.
///
/// Only the HDV SVO *estimate* enters here. The previous solution, shifted
/// by one step, seeds the solve.
pub fn plan_step(
    x1: VehicleState,
    x2: VehicleState,
    phi2_estimate: f64,
    state: &PlannerState,
    cfg: &ScenarioConfig,
    opts: &SolverOptions,
) -> Result<PlanStep> {
    let phi1 = adapt_cav_svo(phi2_estimate)?;
    let svo = SvoPair::new(phi1, phi2_estimate)?;
    let warm = state
        .previous_solution
        .as_ref()
        .filter(|(a, b)| a.len() == cfg.horizon && b.len() == cfg.horizon)
        .map(|(a, b)| (a.shifted(), b.shifted()));
    let solution = solve(x1, x2, &svo, cfg, warm.as_ref().map(|(a, b)| (a, b)), opts)?;
    let u1_apply = solution.seq1.get(0);
    Ok(PlanStep {
        u1_apply,
        predicted_hdv_seq: solution.seq2.clone(),
        new_state: PlannerState {
            previous_solution: Some((solution.seq1.clone(), solution.seq2.clone())),
            current_svo: svo,
        },
        solution,
    })
}
