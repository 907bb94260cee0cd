//! Domain types shared by every layer: vehicle states, control sequences,
//! SVO angles and the scenario configuration.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Longitudinal state of one vehicle.
///
/// `position` is measured along the vehicle's own road relative to the
/// conflict point: negative upstream, zero at the conflict point, positive
/// once the vehicle has passed it.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub position: f64,
    pub speed: f64,
}

impl VehicleState {
    pub const fn new(position: f64, speed: f64) -> Self {
        Self { position, speed }
    }

    pub fn is_finite(&self) -> bool {
        self.position.is_finite() && self.speed.is_finite()
    }
}

/// Longitudinal acceleration command in m/s².
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Control {
    pub acceleration: f64,
}

impl Control {
    pub const ZERO: Control = Control { acceleration: 0.0 };

    pub const fn new(acceleration: f64) -> Self {
        Self { acceleration }
    }
}

impl From<f64> for Control {
    fn from(acceleration: f64) -> Self {
        Self { acceleration }
    }
}

/// Acceleration sequence of one vehicle over a planning horizon.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlSequence(Vec<f64>);

impl ControlSequence {
    pub fn new(accelerations: Vec<f64>) -> Self {
        Self(accelerations)
    }

    pub fn zeros(horizon: usize) -> Self {
        Self(vec![0.0; horizon])
    }

    pub fn constant(horizon: usize, acceleration: f64) -> Self {
        Self(vec![acceleration; horizon])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, k: usize) -> Control {
        Control::new(self.0[k])
    }

    pub fn first(&self) -> Option<Control> {
        self.0.first().copied().map(Control::new)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = Control> + '_ {
        self.0.iter().copied().map(Control::new)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Drops the first element and repeats the last one, keeping the length.
    pub fn shifted(&self) -> Self {
        match self.0.split_first() {
            None => Self::default(),
            Some((_, rest)) => {
                let mut v = rest.to_vec();
                v.push(*self.0.last().unwrap());
                Self(v)
            }
        }
    }
}

impl From<Vec<f64>> for ControlSequence {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Maps the unconstrained parameter to an SVO angle in (0, π/2).
pub fn phi_from_psi(psi: f64) -> f64 {
    FRAC_PI_2 * sigmoid(psi)
}

/// Inverse of [`phi_from_psi`].
pub fn psi_from_phi(phi: f64) -> Result<f64> {
    check_svo_angle("phi", phi)?;
    let s = phi / FRAC_PI_2;
    Ok((s / (1.0 - s)).ln())
}

pub(crate) fn check_svo_angle(what: &'static str, phi: f64) -> Result<()> {
    if phi.is_finite() && phi > 0.0 && phi < FRAC_PI_2 {
        Ok(())
    } else {
        Err(Error::Domain {
            what,
            value: phi,
            domain: "(0, pi/2)",
        })
    }
}

/// SVO angles of the CAV (`phi1`) and the HDV (`phi2`), together with the
/// unconstrained parameter `psi` that generates `phi2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvoPair {
    phi1: f64,
    phi2: f64,
    psi: f64,
}

impl SvoPair {
    pub fn new(phi1: f64, phi2: f64) -> Result<Self> {
        check_svo_angle("phi1", phi1)?;
        let psi = psi_from_phi(phi2)?;
        Ok(Self {
            phi1,
            phi2: phi_from_psi(psi),
            psi,
        })
    }

    pub fn from_psi(phi1: f64, psi: f64) -> Result<Self> {
        check_svo_angle("phi1", phi1)?;
        if !psi.is_finite() {
            return Err(Error::Domain {
                what: "psi",
                value: psi,
                domain: "finite reals",
            });
        }
        Ok(Self {
            phi1,
            phi2: phi_from_psi(psi),
            psi,
        })
    }

    pub fn phi1(&self) -> f64 {
        self.phi1
    }

    pub fn phi2(&self) -> f64 {
        self.phi2
    }

    pub fn psi(&self) -> f64 {
        self.psi
    }
}

/// One-step observation of both vehicles used by the SVO estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySegment {
    pub x1: VehicleState,
    pub x2: VehicleState,
    pub x1_next: VehicleState,
    pub x2_next: VehicleState,
    pub u1: Control,
    pub u2: Control,
}

impl TrajectorySegment {
    /// Builds a segment by stepping both vehicles through the dynamics.
    pub fn from_step(
        x1: VehicleState,
        x2: VehicleState,
        u1: Control,
        u2: Control,
        dt: f64,
    ) -> Self {
        Self {
            x1,
            x2,
            x1_next: crate::dynamics::step(x1, u1, dt),
            x2_next: crate::dynamics::step(x2, u2, dt),
            u1,
            u2,
        }
    }
}

/// Weights, bounds, horizons and geometry of the merging scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// CAV acceleration weight.
    pub w1: f64,
    /// CAV speed-tracking weight.
    pub w2: f64,
    /// HDV acceleration weight.
    pub w3: f64,
    /// HDV speed-tracking weight.
    pub w4: f64,
    /// Collision-avoidance barrier weight.
    pub w5: f64,
    /// Sampling time [s].
    pub dt: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub u_min: f64,
    pub u_max: f64,
    /// Control horizon in steps.
    pub horizon: usize,
    /// Estimation horizon in steps.
    pub estimation_horizon: usize,
    /// Estimator learning rate.
    pub eta: f64,
    /// Safety threshold of the barrier [m].
    pub safety_radius: f64,
    /// Length of the control zone upstream of the conflict point [m].
    pub control_zone_length: f64,
    /// Barrier denominator below which the penalty is continued linearly.
    pub barrier_epsilon: f64,
    /// Gradient-ascent steps per estimator update.
    pub n_inner: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        default_config()
    }
}

/// Simulation parameters used throughout the merging experiments.
pub fn default_config() -> ScenarioConfig {
    ScenarioConfig {
        w1: 1.0,
        w2: 5.0,
        w3: 1.0,
        w4: 5.0,
        w5: 1e7,
        dt: 0.1,
        v_min: 0.0,
        v_max: 30.0,
        u_min: -10.0,
        u_max: 5.0,
        horizon: 20,
        estimation_horizon: 20,
        eta: 1.0,
        safety_radius: 10.0,
        control_zone_length: 120.0,
        barrier_epsilon: 1.0,
        n_inner: 1,
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        let reals = [
            self.w1,
            self.w2,
            self.w3,
            self.w4,
            self.w5,
            self.dt,
            self.v_min,
            self.v_max,
            self.u_min,
            self.u_max,
            self.eta,
            self.safety_radius,
            self.control_zone_length,
            self.barrier_epsilon,
        ];
        if reals.iter().any(|x| !x.is_finite()) {
            return bad("all real-valued parameters must be finite");
        }
        if [self.w1, self.w2, self.w3, self.w4, self.w5]
            .iter()
            .any(|&w| w <= 0.0)
        {
            return bad("weights w1..w5 must be positive");
        }
        if self.dt <= 0.0 {
            return bad("dt must be positive");
        }
        if self.v_min >= self.v_max {
            return bad("v_min must be below v_max");
        }
        if !(self.u_min < 0.0 && 0.0 < self.u_max) {
            return bad("u_min < 0 < u_max is required");
        }
        if self.horizon == 0 || self.estimation_horizon == 0 {
            return bad("H and L must be at least 1");
        }
        if self.n_inner == 0 {
            return bad("n_inner must be at least 1");
        }
        if self.eta <= 0.0 {
            return bad("eta must be positive");
        }
        if self.safety_radius <= 0.0 || self.control_zone_length <= 0.0 {
            return bad("r and Lc must be positive");
        }
        if self.barrier_epsilon <= 0.0 {
            return bad("barrier_epsilon must be positive");
        }
        Ok(())
    }

    /// Whether a position lies in the region where the cooperative
    /// controller and the human model are active: from the zone entry up to
    /// the point where the vehicle counts as having crossed (`position > r`).
    pub fn in_control_zone(&self, position: f64) -> bool {
        position >= -self.control_zone_length && position <= self.safety_radius
    }

    /// A vehicle has crossed the conflict point once it is past the safety disc.
    pub fn has_crossed(&self, position: f64) -> bool {
        position > self.safety_radius
    }

    /// Parses a flat `key = value` file. Missing keys keep their defaults;
    /// unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = default_config();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Config {
                line: line_no,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let real = || {
                value
                    .parse::<f64>()
                    .map_err(|e| err(format!("{key}: `{value}` is not a number ({e})")))
            };
            let count = || {
                value
                    .parse::<usize>()
                    .map_err(|e| err(format!("{key}: `{value}` is not a step count ({e})")))
            };
            match key {
                "w1" => cfg.w1 = real()?,
                "w2" => cfg.w2 = real()?,
                "w3" => cfg.w3 = real()?,
                "w4" => cfg.w4 = real()?,
                "w5" => cfg.w5 = real()?,
                "dt" => cfg.dt = real()?,
                "v_min" => cfg.v_min = real()?,
                "v_max" => cfg.v_max = real()?,
                "u_min" => cfg.u_min = real()?,
                "u_max" => cfg.u_max = real()?,
                "H" => cfg.horizon = count()?,
                "L" => cfg.estimation_horizon = count()?,
                "eta" => cfg.eta = real()?,
                "r" => cfg.safety_radius = real()?,
                "Lc" => cfg.control_zone_length = real()?,
                "barrier_epsilon" => cfg.barrier_epsilon = real()?,
                "n_inner" => cfg.n_inner = count()?,
                other => return Err(err(format!("unknown key `{other}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

impl fmt::Display for ScenarioConfig {
    /// Writes the config in the same `key = value` format that [`ScenarioConfig::parse`] reads.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "w1 = {}", self.w1)?;
        writeln!(f, "w2 = {}", self.w2)?;
        writeln!(f, "w3 = {}", self.w3)?;
        writeln!(f, "w4 = {}", self.w4)?;
        writeln!(f, "w5 = {:e}", self.w5)?;
        writeln!(f, "dt = {}", self.dt)?;
        writeln!(f, "v_min = {}", self.v_min)?;
        writeln!(f, "v_max = {}", self.v_max)?;
        writeln!(f, "u_min = {}", self.u_min)?;
        writeln!(f, "u_max = {}", self.u_max)?;
        writeln!(f, "H = {}", self.horizon)?;
        writeln!(f, "L = {}", self.estimation_horizon)?;
        writeln!(f, "eta = {}", self.eta)?;
        writeln!(f, "r = {}", self.safety_radius)?;
        writeln!(f, "Lc = {}", self.control_zone_length)?;
        writeln!(f, "barrier_epsilon = {}", self.barrier_epsilon)?;
        writeln!(f, "n_inner = {}", self.n_inner)
    }
}
