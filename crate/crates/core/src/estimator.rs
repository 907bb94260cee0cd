//! Online estimate of the human driver's SVO angle by maximum-entropy IRL
//! over a sliding window of one-step trajectory segments.
//!
//! The human is modelled as choosing actions with probability proportional
//! to `exp(−θ(φ2)ᵀ f)`. The partition function is never evaluated: the
//! expected features are replaced by the features of the most likely
//! (cost-minimizing) action for each buffered segment, and `ψ` with
//! `φ2 = (π/2)·σ(ψ)` is moved by gradient ascent on the resulting
//! approximate log-likelihood.

use std::collections::VecDeque;
use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::dynamics;
use crate::error::{Error, Result};
use crate::objectives::{features, hdv_stage_response, FeatureVector, ThetaWeights};
use crate::types::{
    check_svo_angle, phi_from_psi, psi_from_phi, sigmoid, ScenarioConfig, TrajectorySegment,
    VehicleState,
};

/// ψ is kept within ±PSI_LIMIT so that φ2 stays representably inside (0, π/2).
pub const PSI_LIMIT: f64 = 30.0;

/// Sliding-window estimator state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorState {
    psi: f64,
    buffer: VecDeque<TrajectorySegment>,
    capacity: usize,
    eta: f64,
}

/// Starts an estimator at `phi2_init`, or at π/4 (ψ = 0) when none is given.
pub fn initialize(phi2_init: Option<f64>, cfg: &ScenarioConfig) -> Result<EstimatorState> {
    let psi = match phi2_init {
        Some(phi) => psi_from_phi(phi)?,
        None => 0.0,
    };
    Ok(EstimatorState {
        psi,
        buffer: VecDeque::with_capacity(cfg.estimation_horizon),
        capacity: cfg.estimation_horizon,
        eta: cfg.eta,
    })
}

fn close(a: VehicleState, b: VehicleState) -> bool {
    let tol = |x: f64| 1e-6 * (1.0 + x.abs());
    (a.position - b.position).abs() <= tol(a.position) && (a.speed - b.speed).abs() <= tol(a.speed)
}

fn check_segment(seg: &TrajectorySegment, dt: f64) -> Result<()> {
    let all = [seg.x1, seg.x2, seg.x1_next, seg.x2_next];
    if all.iter().any(|x| !x.is_finite())
        || !seg.u1.acceleration.is_finite()
        || !seg.u2.acceleration.is_finite()
    {
        return Err(Error::InconsistentSegment("non-finite entry".into()));
    }
    if !close(dynamics::step(seg.x1, seg.u1, dt), seg.x1_next) {
        return Err(Error::InconsistentSegment("CAV next state".into()));
    }
    if !close(dynamics::step(seg.x2, seg.u2, dt), seg.x2_next) {
        return Err(Error::InconsistentSegment("HDV next state".into()));
    }
    Ok(())
}

impl EstimatorState {
    pub fn psi(&self) -> f64 {
        self.psi
    }

    pub fn phi2(&self) -> f64 {
        phi_from_psi(self.psi)
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn segments(&self) -> impl Iterator<Item = &TrajectorySegment> {
        self.buffer.iter()
    }

    /// Appends the newest segment, evicting the oldest beyond capacity.
    pub fn push_segment(&mut self, seg: TrajectorySegment, cfg: &ScenarioConfig) -> Result<()> {
        check_segment(&seg, cfg.dt)?;
        if self.buffer.len() == self.capacity {
            self.buffer.pop_front();
        }
        self.buffer.push_back(seg);
        Ok(())
    }

    /// Mean observed feature vector over the window.
    pub fn empirical_features(&self, cfg: &ScenarioConfig) -> Result<FeatureVector> {
        FeatureVector::mean(self.buffer.iter().map(|s| features(s, cfg))).ok_or(Error::NoData)
    }

    /// Mean feature vector of the most likely segments at `phi2`.
    pub fn expected_features(&self, phi2: f64, cfg: &ScenarioConfig) -> Result<FeatureVector> {
        check_svo_angle("phi2", phi2)?;
        FeatureVector::mean(
            self.buffer
                .iter()
                .map(|s| features(&optimized_segment(s, phi2, cfg), cfg)),
        )
        .ok_or(Error::NoData)
    }

    /// Derivative of the approximate log-likelihood with respect to `ψ`.
    ///
    /// With cost-based probabilities `exp(−θᵀf)/Z` and `log Z` approximated by
    /// `−θᵀ f(most likely)`, the gradient in θ is expected minus observed
    /// features (per segment, averaged here). It is mapped to ψ through
    /// `dθ/dφ2 = [−sin φ2, cos φ2]` and `dφ2/dψ = (π/2)·σ(ψ)(1 − σ(ψ))`.
    pub fn likelihood_gradient_psi(&self, cfg: &ScenarioConfig) -> Result<f64> {
        let phi2 = self.phi2();
        let grad_theta = self.expected_features(phi2, cfg)? - self.empirical_features(cfg)?;
        Ok(chain_to_psi(grad_theta, self.psi))
    }

    /// One gradient-ascent step on ψ (repeated `cfg.n_inner` times).
    /// Returns the new φ2 estimate; an empty window leaves it unchanged.
    pub fn update(&mut self, cfg: &ScenarioConfig) -> f64 {
        for _ in 0..cfg.n_inner {
            let Ok(g) = self.likelihood_gradient_psi(cfg) else {
                break;
            };
            let next = self.psi + self.eta * g;
            if next.is_finite() {
                self.psi = next.clamp(-PSI_LIMIT, PSI_LIMIT);
            }
        }
        self.phi2()
    }
}

/// Chain rule from a gradient in θ = [cos φ2, sin φ2] to a gradient in ψ.
pub fn chain_to_psi(grad_theta: FeatureVector, psi: f64) -> f64 {
    let phi2 = phi_from_psi(psi);
    let (t_ego, t_coop) = ThetaWeights::from_phi(phi2).tangent();
    let s = sigmoid(psi);
    (grad_theta.f_ego2 * t_ego + grad_theta.f_coop * t_coop) * FRAC_PI_2 * s * (1.0 - s)
}

/// Replaces the HDV's action in `seg` by the one minimizing `θ(φ2)ᵀ f` with
/// the CAV's motion and the HDV's start state fixed.
pub fn optimized_segment(
    seg: &TrajectorySegment,
    phi2: f64,
    cfg: &ScenarioConfig,
) -> TrajectorySegment {
    let u2 = hdv_stage_response(seg.x1_next, seg.x2, phi2, cfg);
    TrajectorySegment {
        u2,
        x2_next: dynamics::step(seg.x2, u2, cfg.dt),
        ..*seg
    }
}
