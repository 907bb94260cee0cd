//! Stage costs of the merging game, their SVO-weighted combinations and
//! analytic derivatives over a control horizon.
//!
//! Every stage cost is evaluated at the post-step state `x_{k+1}` and the
//! action `u_k` that produced it. Horizon costs take the decision variables
//! as plain acceleration slices so that the solver can evaluate them without
//! allocating sequences.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dynamics;
use crate::solver::{minimize_scalar, ScalarProblem};
use crate::types::{
    Control, ControlSequence, ScenarioConfig, SvoPair, TrajectorySegment, VehicleState,
};

/// Bound on the human's acceleration used only to keep the one-step
/// response search finite. Far outside anything a driver produces.
pub const HDV_ACCEL_LIMIT: f64 = 50.0;

/// The two players of the merging game.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Player {
    /// Connected automated vehicle (player 1).
    Cav,
    /// Human-driven vehicle (player 2).
    Hdv,
}

/// Features of one trajectory segment: the HDV's egoistic cost and the
/// shared collision-avoidance cost.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVector {
    pub f_ego2: f64,
    pub f_coop: f64,
}

impl FeatureVector {
    pub const ZERO: FeatureVector = FeatureVector {
        f_ego2: 0.0,
        f_coop: 0.0,
    };

    pub fn new(f_ego2: f64, f_coop: f64) -> Self {
        Self { f_ego2, f_coop }
    }

    pub fn scaled(self, k: f64) -> Self {
        Self::new(self.f_ego2 * k, self.f_coop * k)
    }

    pub fn mean<I: IntoIterator<Item = FeatureVector>>(items: I) -> Option<Self> {
        let (sum, n) = items
            .into_iter()
            .fold((FeatureVector::ZERO, 0usize), |(s, n), f| (s + f, n + 1));
        (n > 0).then(|| sum.scaled(1.0 / n as f64))
    }
}

impl std::ops::Add for FeatureVector {
    type Output = FeatureVector;
    fn add(self, o: FeatureVector) -> FeatureVector {
        FeatureVector::new(self.f_ego2 + o.f_ego2, self.f_coop + o.f_coop)
    }
}

impl std::ops::Sub for FeatureVector {
    type Output = FeatureVector;
    fn sub(self, o: FeatureVector) -> FeatureVector {
        FeatureVector::new(self.f_ego2 - o.f_ego2, self.f_coop - o.f_coop)
    }
}

/// Unit weight vector `[cos φ2, sin φ2]` of the human's objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaWeights {
    pub c: f64,
    pub s: f64,
}

impl ThetaWeights {
    pub fn from_phi(phi2: f64) -> Self {
        let (s, c) = phi2.sin_cos();
        Self { c, s }
    }

    pub fn dot(&self, f: FeatureVector) -> f64 {
        self.c * f.f_ego2 + self.s * f.f_coop
    }

    /// d θ / d φ2.
    pub fn tangent(&self) -> (f64, f64) {
        (-self.s, self.c)
    }
}

fn ego_cost(v_next: f64, a: f64, w_accel: f64, w_speed: f64, v_max: f64) -> f64 {
    w_accel * a * a + w_speed * (v_next - v_max).powi(2)
}

/// CAV egoistic cost: control effort plus deviation from the speed limit.
pub fn ego_cost_cav(x_next: VehicleState, u: Control, cfg: &ScenarioConfig) -> f64 {
    ego_cost(x_next.speed, u.acceleration, cfg.w1, cfg.w2, cfg.v_max)
}

/// HDV egoistic cost, same form as the CAV's with weights `w3`, `w4`.
pub fn ego_cost_hdv(x_next: VehicleState, u: Control, cfg: &ScenarioConfig) -> f64 {
    ego_cost(x_next.speed, u.acceleration, cfg.w3, cfg.w4, cfg.v_max)
}

/// Value and first two derivatives of the barrier `w5 / D` with respect to
/// `D`, continued linearly below `barrier_epsilon`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BarrierEval {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

pub(crate) fn barrier(d: f64, cfg: &ScenarioConfig) -> BarrierEval {
    let w5 = cfg.w5;
    let eps = cfg.barrier_epsilon;
    if d > eps {
        BarrierEval {
            value: w5 / d,
            d1: -w5 / (d * d),
            d2: 2.0 * w5 / (d * d * d),
        }
    } else {
        let slope = -w5 / (eps * eps);
        BarrierEval {
            value: w5 / eps + slope * (d - eps),
            d1: slope,
            d2: 0.0,
        }
    }
}

pub(crate) fn barrier_denominator(p1: f64, p2: f64, cfg: &ScenarioConfig) -> f64 {
    p1 * p1 + p2 * p2 - cfg.safety_radius * cfg.safety_radius
}

/// Collision-avoidance penalty `w5 / (p1² + p2² − r²)`.
///
/// For denominators at or below `barrier_epsilon` the penalty follows its
/// tangent line at `barrier_epsilon`, so it stays finite and C¹ everywhere.
pub fn coop_cost(x1_next: VehicleState, x2_next: VehicleState, cfg: &ScenarioConfig) -> f64 {
    barrier(
        barrier_denominator(x1_next.position, x2_next.position, cfg),
        cfg,
    )
    .value
}

/// A player's own objective: `ego·cos φ + coop·sin φ`.
pub fn weighted_cost_player(_player: Player, phi: f64, ego: f64, coop: f64) -> f64 {
    let (s, c) = phi.sin_cos();
    ego * c + coop * s
}

/// Coefficients applied to the three stage costs (CAV ego, HDV ego, shared).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageWeights {
    pub ego1: f64,
    pub ego2: f64,
    pub coop: f64,
}

impl StageWeights {
    /// Weights of the potential function of the game.
    pub fn potential(svo: &SvoPair) -> Self {
        let (s1, c1) = svo.phi1().sin_cos();
        let (s2, c2) = svo.phi2().sin_cos();
        Self {
            ego1: c1 * s2,
            ego2: s1 * c2,
            coop: s1 * s2,
        }
    }

    /// Weights of one player's own objective.
    pub fn player(player: Player, phi: f64) -> Self {
        let (s, c) = phi.sin_cos();
        match player {
            Player::Cav => Self {
                ego1: c,
                ego2: 0.0,
                coop: s,
            },
            Player::Hdv => Self {
                ego1: 0.0,
                ego2: c,
                coop: s,
            },
        }
    }
}

fn stage_cost(
    w: &StageWeights,
    x1n: VehicleState,
    u1: f64,
    x2n: VehicleState,
    u2: f64,
    cfg: &ScenarioConfig,
) -> f64 {
    w.ego1 * ego_cost_cav(x1n, Control::new(u1), cfg)
        + w.ego2 * ego_cost_hdv(x2n, Control::new(u2), cfg)
        + w.coop * coop_cost(x1n, x2n, cfg)
}

/// Stage value of the potential function.
pub fn potential_cost(
    x1n: VehicleState,
    u1: Control,
    x2n: VehicleState,
    u2: Control,
    svo: &SvoPair,
    cfg: &ScenarioConfig,
) -> f64 {
    stage_cost(
        &StageWeights::potential(svo),
        x1n,
        u1.acceleration,
        x2n,
        u2.acceleration,
        cfg,
    )
}

/// Initial states of both vehicles, the common argument of horizon costs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointState {
    pub x1: VehicleState,
    pub x2: VehicleState,
}

/// Sum of weighted stage costs over the horizon.
pub fn horizon_cost(
    w: &StageWeights,
    x0: JointState,
    seq1: &[f64],
    seq2: &[f64],
    cfg: &ScenarioConfig,
) -> f64 {
    assert_eq!(
        seq1.len(),
        seq2.len(),
        "control sequences must share a horizon"
    );
    let mut x1 = x0.x1;
    let mut x2 = x0.x2;
    let mut total = 0.0;
    for (&u1, &u2) in seq1.iter().zip(seq2) {
        x1 = dynamics::step(x1, Control::new(u1), cfg.dt);
        x2 = dynamics::step(x2, Control::new(u2), cfg.dt);
        total += stage_cost(w, x1, u1, x2, u2, cfg);
    }
    total
}

/// Horizon sum of the potential function.
pub fn horizon_potential(
    x1_0: VehicleState,
    x2_0: VehicleState,
    seq1: &ControlSequence,
    seq2: &ControlSequence,
    svo: &SvoPair,
    cfg: &ScenarioConfig,
) -> f64 {
    horizon_cost(
        &StageWeights::potential(svo),
        JointState { x1: x1_0, x2: x2_0 },
        seq1.as_slice(),
        seq2.as_slice(),
        cfg,
    )
}

/// Horizon sum of one player's own objective.
pub fn horizon_player_cost(
    player: Player,
    phi: f64,
    x1_0: VehicleState,
    x2_0: VehicleState,
    seq1: &ControlSequence,
    seq2: &ControlSequence,
    cfg: &ScenarioConfig,
) -> f64 {
    horizon_cost(
        &StageWeights::player(player, phi),
        JointState { x1: x1_0, x2: x2_0 },
        seq1.as_slice(),
        seq2.as_slice(),
        cfg,
    )
}

/// Gradient of [`horizon_cost`] with respect to both acceleration
/// sequences, by a backward (costate) sweep through the linear dynamics.
pub fn horizon_cost_gradient(
    w: &StageWeights,
    x0: JointState,
    seq1: &[f64],
    seq2: &[f64],
    cfg: &ScenarioConfig,
) -> (Vec<f64>, Vec<f64>) {
    let h = seq1.len();
    assert_eq!(h, seq2.len(), "control sequences must share a horizon");
    let xs1 = dynamics::rollout_slice(x0.x1, seq1, cfg.dt);
    let xs2 = dynamics::rollout_slice(x0.x2, seq2, cfg.dt);
    let (a_mat, b_vec) = dynamics::state_jacobians(cfg.dt);
    let a_t = a_mat.transpose();

    let mut g1 = vec![0.0; h];
    let mut g2 = vec![0.0; h];
    // costates d(cost-to-go)/d x_{k+1}, propagated backwards
    let mut lam1 = nalgebra::Vector2::zeros();
    let mut lam2 = nalgebra::Vector2::zeros();
    for k in (0..h).rev() {
        let (x1n, x2n) = (xs1[k], xs2[k]);
        let d = barrier_denominator(x1n.position, x2n.position, cfg);
        let b = barrier(d, cfg);
        let dp1 = w.coop * b.d1 * 2.0 * x1n.position;
        let dp2 = w.coop * b.d1 * 2.0 * x2n.position;
        let dv1 = w.ego1 * 2.0 * cfg.w2 * (x1n.speed - cfg.v_max);
        let dv2 = w.ego2 * 2.0 * cfg.w4 * (x2n.speed - cfg.v_max);
        lam1 += nalgebra::Vector2::new(dp1, dv1);
        lam2 += nalgebra::Vector2::new(dp2, dv2);
        g1[k] = w.ego1 * 2.0 * cfg.w1 * seq1[k] + b_vec.dot(&lam1);
        g2[k] = w.ego2 * 2.0 * cfg.w3 * seq2[k] + b_vec.dot(&lam2);
        lam1 = a_t * lam1;
        lam2 = a_t * lam2;
    }
    (g1, g2)
}

/// Gradient of [`horizon_potential`] with respect to `seq1` and `seq2`.
pub fn horizon_potential_gradient(
    x1_0: VehicleState,
    x2_0: VehicleState,
    seq1: &ControlSequence,
    seq2: &ControlSequence,
    svo: &SvoPair,
    cfg: &ScenarioConfig,
) -> (Vec<f64>, Vec<f64>) {
    horizon_cost_gradient(
        &StageWeights::potential(svo),
        JointState { x1: x1_0, x2: x2_0 },
        seq1.as_slice(),
        seq2.as_slice(),
        cfg,
    )
}

/// Hessian of [`horizon_cost`] over the stacked variables `[seq1; seq2]`.
pub fn horizon_cost_hessian(
    w: &StageWeights,
    x0: JointState,
    seq1: &[f64],
    seq2: &[f64],
    cfg: &ScenarioConfig,
) -> DMatrix<f64> {
    let h = seq1.len();
    assert_eq!(h, seq2.len(), "control sequences must share a horizon");
    let dt = cfg.dt;
    let n = 2 * h;
    let mut hess = DMatrix::zeros(n, n);

    // quadratic ego terms: speed after step k depends on a_0..a_k with slope dt
    for j in 0..h {
        for l in 0..h {
            let tail = (h - j.max(l)) as f64;
            let e1 = w.ego1 * 2.0 * cfg.w2 * dt * dt * tail;
            let e2 = w.ego2 * 2.0 * cfg.w4 * dt * dt * tail;
            hess[(j, l)] += e1;
            hess[(h + j, h + l)] += e2;
        }
        hess[(j, j)] += w.ego1 * 2.0 * cfg.w1;
        hess[(h + j, h + j)] += w.ego2 * 2.0 * cfg.w3;
    }

    if w.coop != 0.0 {
        let xs1 = dynamics::rollout_slice(x0.x1, seq1, dt);
        let xs2 = dynamics::rollout_slice(x0.x2, seq2, dt);
        let mut grad_d = vec![0.0; n];
        // position after step k depends on a_j (j <= k) with slope dt²(k - j + 1/2)
        let sens = |k: usize, j: usize| dt * dt * ((k - j) as f64 + 0.5);
        for k in 0..h {
            let (p1, p2) = (xs1[k].position, xs2[k].position);
            let b = barrier(barrier_denominator(p1, p2, cfg), cfg);
            grad_d.iter_mut().for_each(|g| *g = 0.0);
            for j in 0..=k {
                grad_d[j] = 2.0 * p1 * sens(k, j);
                grad_d[h + j] = 2.0 * p2 * sens(k, j);
            }
            let outer = w.coop * b.d2;
            let curv = w.coop * b.d1 * 2.0;
            for block in [0, h] {
                for j in 0..=k {
                    for l in 0..=k {
                        hess[(block + j, block + l)] += curv * sens(k, j) * sens(k, l);
                    }
                }
            }
            if outer != 0.0 {
                for i in 0..n {
                    if grad_d[i] == 0.0 {
                        continue;
                    }
                    for m in 0..n {
                        hess[(i, m)] += outer * grad_d[i] * grad_d[m];
                    }
                }
            }
        }
    }
    hess
}

/// Feature vector of a segment: the HDV's egoistic cost and the shared cost.
pub fn features(seg: &TrajectorySegment, cfg: &ScenarioConfig) -> FeatureVector {
    FeatureVector {
        f_ego2: ego_cost_hdv(seg.x2_next, seg.u2, cfg),
        f_coop: coop_cost(seg.x1_next, seg.x2_next, cfg),
    }
}

/// One-step human objective `θ(φ2)ᵀ f` as a function of the HDV's
/// acceleration, with the CAV's next state held fixed.
pub(crate) struct HdvStageProblem<'a> {
    pub x1_next: VehicleState,
    pub x2: VehicleState,
    pub theta: ThetaWeights,
    pub cfg: &'a ScenarioConfig,
}

impl ScalarProblem for HdvStageProblem<'_> {
    fn eval(&self, a: f64) -> (f64, f64, f64) {
        let cfg = self.cfg;
        let dt = cfg.dt;
        let x2n = dynamics::step(self.x2, Control::new(a), dt);
        let dv = x2n.speed - cfg.v_max;
        let ego = cfg.w3 * a * a + cfg.w4 * dv * dv;
        let ego_d = 2.0 * cfg.w3 * a + 2.0 * cfg.w4 * dv * dt;
        let ego_dd = 2.0 * cfg.w3 + 2.0 * cfg.w4 * dt * dt;

        let half = 0.5 * dt * dt;
        let p2 = x2n.position;
        let b = barrier(barrier_denominator(self.x1_next.position, p2, cfg), cfg);
        let dd = 2.0 * p2 * half;
        let coop_d = b.d1 * dd;
        let coop_dd = b.d2 * dd * dd + b.d1 * 2.0 * half * half;

        let th = self.theta;
        (
            th.c * ego + th.s * b.value,
            th.c * ego_d + th.s * coop_d,
            th.c * ego_dd + th.s * coop_dd,
        )
    }
}

/// The HDV acceleration minimizing `θ(φ2)ᵀ f` over one step, given where
/// the CAV ends up after that step.
pub fn hdv_stage_response(
    x1_next: VehicleState,
    x2: VehicleState,
    phi2: f64,
    cfg: &ScenarioConfig,
) -> Control {
    let problem = HdvStageProblem {
        x1_next,
        x2,
        theta: ThetaWeights::from_phi(phi2),
        cfg,
    };
    Control::new(minimize_scalar(&problem, -HDV_ACCEL_LIMIT, HDV_ACCEL_LIMIT, 1e-10).x)
}
