//! Local minimizer for the joint horizon problem and for single-player best
//! responses.
//!
//! The decision vector is one or both acceleration sequences. The CAV's
//! acceleration box and its speed bounds are linear inequalities in its
//! accelerations (speed after step k is `v0 + dt·Σ_{j≤k} a_j`), so the
//! feasible set is a polyhedron. [`minimize`] is a feasible active-set
//! method: it takes modified-Newton steps in the null space of the working
//! set, limits every step by a ratio test so iterates never leave the
//! polyhedron, backtracks with an Armijo rule, and releases constraints whose
//! multipliers have the wrong sign. The objective is therefore non-increasing
//! over accepted steps and every iterate is feasible.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::{
    horizon_cost, horizon_cost_gradient, horizon_cost_hessian, JointState, Player, StageWeights,
};
use crate::types::{ControlSequence, ScenarioConfig, SvoPair, VehicleState};

/// Tuning of [`minimize`] and of the planner solves built on top of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Bound on the reduced-gradient and multiplier-sign residual, relative
    /// to `max(1, |f|)`.
    pub gradient_tolerance: f64,
    /// Steps shorter than this (relative to the iterate) end the run.
    pub step_tolerance: f64,
    pub line_search_shrink: f64,
    pub armijo_constant: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            gradient_tolerance: 1e-6,
            step_tolerance: 1e-14,
            line_search_shrink: 0.5,
            armijo_constant: 1e-4,
        }
    }
}

/// Smooth objective over `R^n` with exact first and second derivatives.
pub trait SmoothObjective {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    fn hessian(&self, x: &[f64]) -> DMatrix<f64>;
}

/// One inequality `Σ coeff·x[index] ≤ bound`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearInequality {
    pub terms: Vec<(usize, f64)>,
    pub bound: f64,
}

impl LinearInequality {
    fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(i, c)| c * x[i]).sum()
    }

    fn slack(&self, x: &[f64]) -> f64 {
        self.bound - self.eval(x)
    }

    fn dense(&self, n: usize) -> DVector<f64> {
        let mut row = DVector::zeros(n);
        for &(i, c) in &self.terms {
            row[i] += c;
        }
        row
    }
}

/// Outcome of [`minimize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Stationarity residual divided by `max(1, |f|)`.
    pub kkt_residual: f64,
    /// Objective value after each accepted step, starting with the initial point.
    pub trace: Vec<f64>,
}

struct Stationarity {
    residual: f64,
    /// Working-set position of the most negative multiplier, if any is negative.
    release: Option<(usize, f64)>,
    reduced_gradient_norm: f64,
}

fn null_space(rows: &[DVector<f64>], n: usize) -> DMatrix<f64> {
    if rows.is_empty() {
        return DMatrix::identity(n, n);
    }
    let mut gram = DMatrix::zeros(n, n);
    for r in rows {
        gram += r * r.transpose();
    }
    let eig = SymmetricEigen::new(gram);
    let top = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let cut = 1e-10 * top.max(1.0);
    let cols: Vec<usize> = (0..n)
        .filter(|&i| eig.eigenvalues[i].abs() <= cut)
        .collect();
    let mut z = DMatrix::zeros(n, cols.len());
    for (j, &i) in cols.iter().enumerate() {
        z.set_column(j, &eig.eigenvectors.column(i));
    }
    z
}

fn stationarity(g: &DVector<f64>, rows: &[DVector<f64>], z: &DMatrix<f64>) -> Stationarity {
    let reduced = z.transpose() * g;
    let rg = reduced.amax();
    if rows.is_empty() {
        return Stationarity {
            residual: rg,
            release: None,
            reduced_gradient_norm: rg,
        };
    }
    let m = rows.len();
    let n = g.len();
    let mut c = DMatrix::zeros(m, n);
    for (i, r) in rows.iter().enumerate() {
        c.set_row(i, &r.transpose());
    }
    // g + Cᵀλ = 0 in the least-squares sense
    let cct = &c * c.transpose();
    let eps = 1e-12 * cct.amax().max(1e-300);
    let pinv = cct
        .pseudo_inverse(eps)
        .unwrap_or_else(|_| DMatrix::zeros(m, m));
    let lambda = -(pinv * (&c * g));
    let mut release = None;
    for (i, &l) in lambda.iter().enumerate() {
        if l < 0.0 && release.is_none_or(|(_, best)| l < best) {
            release = Some((i, l));
        }
    }
    let neg = release.map_or(0.0, |(_, l)| -l);
    Stationarity {
        residual: rg.max(neg),
        release,
        reduced_gradient_norm: rg,
    }
}

fn newton_direction(hess: &DMatrix<f64>, g: &DVector<f64>, z: &DMatrix<f64>) -> DVector<f64> {
    if z.ncols() == 0 {
        return DVector::zeros(g.len());
    }
    let hr = z.transpose() * hess * z;
    let hr = (&hr + hr.transpose()) * 0.5;
    let eig = SymmetricEigen::new(hr);
    let top = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let floor = 1e-8 * top.max(1e-8);
    let rg = z.transpose() * g;
    let proj = eig.eigenvectors.transpose() * rg;
    let scaled = DVector::from_iterator(
        proj.len(),
        proj.iter()
            .zip(eig.eigenvalues.iter())
            .map(|(p, &l)| p / l.abs().max(floor)),
    );
    -(z * (&eig.eigenvectors * scaled))
}

/// Minimizes `f` over `{x : every constraint holds}` starting from a
/// feasible `x0`.
pub fn minimize<F: SmoothObjective + ?Sized>(
    f: &F,
    constraints: &[LinearInequality],
    x0: Vec<f64>,
    opts: &SolverOptions,
) -> Result<Minimum> {
    let n = f.dim();
    assert_eq!(x0.len(), n, "initial point has the wrong dimension");
    let mut x = x0;
    let mut fx = f.value(&x);
    if !fx.is_finite() {
        return Err(Error::SolverInit(format!(
            "objective is {fx} at the initial point"
        )));
    }
    let act_tol = |c: &LinearInequality| 1e-9 * (1.0 + c.bound.abs());
    let mut working: Vec<usize> = (0..constraints.len())
        .filter(|&i| constraints[i].slack(&x) <= act_tol(&constraints[i]))
        .collect();
    let dense: Vec<DVector<f64>> = constraints.iter().map(|c| c.dense(n)).collect();

    let mut trace = vec![fx];
    let mut iterations = 0;
    let mut kkt = f64::INFINITY;
    let mut converged = false;

    while iterations < opts.max_iterations {
        let g = DVector::from_vec(f.gradient(&x));
        let rows: Vec<DVector<f64>> = working.iter().map(|&i| dense[i].clone()).collect();
        let z = null_space(&rows, n);
        let st = stationarity(&g, &rows, &z);
        let tol = opts.gradient_tolerance * fx.abs().max(1.0);
        kkt = st.residual / fx.abs().max(1.0);

        if st.reduced_gradient_norm <= tol {
            match st.release {
                Some((pos, l)) if -l > tol => {
                    working.remove(pos);
                    iterations += 1;
                    continue;
                }
                _ => {
                    converged = true;
                    break;
                }
            }
        }

        let hess = f.hessian(&x);
        let mut dir = newton_direction(&hess, &g, &z);
        let mut slope = g.dot(&dir);
        if slope.is_nan() || slope >= 0.0 {
            dir = -(&z * (z.transpose() * &g));
            slope = g.dot(&dir);
        }

        // ratio test over constraints outside the working set
        let mut alpha_max = f64::INFINITY;
        let mut blocking = None;
        for (i, c) in constraints.iter().enumerate() {
            if working.contains(&i) {
                continue;
            }
            let rate = dense[i].dot(&dir);
            if rate > 0.0 {
                let a = c.slack(&x).max(0.0) / rate;
                if a < alpha_max {
                    alpha_max = a;
                    blocking = Some(i);
                }
            }
        }

        let mut alpha = alpha_max.min(1.0);
        let mut accepted = None;
        for _ in 0..80 {
            let trial: Vec<f64> = x
                .iter()
                .zip(dir.iter())
                .map(|(xi, di)| xi + alpha * di)
                .collect();
            let ft = f.value(&trial);
            if ft.is_finite() && ft <= fx + opts.armijo_constant * alpha * slope {
                accepted = Some((trial, ft));
                break;
            }
            alpha *= opts.line_search_shrink;
        }
        iterations += 1;

        let Some((trial, ft)) = accepted else {
            // no representable decrease left on this face
            match st.release {
                Some((pos, l)) if -l > tol => {
                    working.remove(pos);
                    continue;
                }
                _ => break,
            }
        };
        let step_len = alpha * dir.amax();
        let hit_bound = alpha_max <= 1.0 && alpha == alpha_max;
        x = trial;
        fx = ft;
        trace.push(fx);
        if hit_bound {
            if let Some(i) = blocking {
                working.push(i);
            }
        }
        let scale = 1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if step_len <= opts.step_tolerance * scale && !hit_bound {
            match st.release {
                Some((pos, l)) if -l > tol => {
                    working.remove(pos);
                }
                _ => break,
            }
        }
    }

    if !converged && iterations >= opts.max_iterations {
        let g = DVector::from_vec(f.gradient(&x));
        let rows: Vec<DVector<f64>> = working.iter().map(|&i| dense[i].clone()).collect();
        let z = null_space(&rows, n);
        kkt = stationarity(&g, &rows, &z).residual / fx.abs().max(1.0);
        converged = kkt <= opts.gradient_tolerance;
    }

    Ok(Minimum {
        x,
        value: fx,
        iterations,
        converged,
        kkt_residual: kkt,
        trace,
    })
}

/// A scalar function with its first two derivatives.
pub trait ScalarProblem {
    fn eval(&self, x: f64) -> (f64, f64, f64);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarMinimum {
    pub x: f64,
    pub value: f64,
}

const SCALAR_GRID: usize = 400;

/// Global-by-scan minimization of a smooth scalar function on `[lo, hi]`:
/// a uniform scan picks the best cell, then a bracketed Newton iteration
/// polishes it to `tol`.
pub fn minimize_scalar<P: ScalarProblem + ?Sized>(
    p: &P,
    lo: f64,
    hi: f64,
    tol: f64,
) -> ScalarMinimum {
    let h = (hi - lo) / SCALAR_GRID as f64;
    let (mut best_i, mut best_f) = (0, f64::INFINITY);
    for i in 0..=SCALAR_GRID {
        let v = p.eval(lo + h * i as f64).0;
        if v < best_f {
            best_i = i;
            best_f = v;
        }
    }
    let xb = lo + h * best_i as f64;
    let mut a = (xb - h).max(lo);
    let mut b = (xb + h).min(hi);
    let mut x = xb;
    let (mut fx, mut d1, mut d2) = p.eval(x);
    for _ in 0..100 {
        if d1 > 0.0 {
            b = x;
        } else if d1 < 0.0 {
            a = x;
        } else {
            break;
        }
        let newton = if d2 > 0.0 { x - d1 / d2 } else { f64::NAN };
        let next = if newton > a && newton < b {
            newton
        } else {
            0.5 * (a + b)
        };
        let moved = (next - x).abs();
        x = next;
        (fx, d1, d2) = p.eval(x);
        if moved <= tol || b - a <= tol {
            break;
        }
    }
    // the bracket may close onto an endpoint of the interval
    for edge in [a, b] {
        let fe = p.eval(edge).0;
        if fe < fx {
            x = edge;
            fx = fe;
        }
    }
    if best_f < fx {
        return ScalarMinimum {
            x: xb,
            value: best_f,
        };
    }
    ScalarMinimum { x, value: fx }
}

/// Result of a joint horizon solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverResult {
    pub seq1: ControlSequence,
    pub seq2: ControlSequence,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub kkt_residual: f64,
}

/// Which sequences are free in a horizon problem.
#[derive(Debug, Clone)]
enum Free {
    Both,
    Only(Player, Vec<f64>),
}

/// Horizon cost with some of the sequences as decision variables.
struct HorizonProblem<'a> {
    weights: StageWeights,
    x0: JointState,
    cfg: &'a ScenarioConfig,
    free: Free,
    horizon: usize,
}

impl HorizonProblem<'_> {
    fn split<'b>(
        &'b self,
        x: &'b [f64],
    ) -> (std::borrow::Cow<'b, [f64]>, std::borrow::Cow<'b, [f64]>) {
        use std::borrow::Cow;
        match &self.free {
            Free::Both => (
                Cow::Borrowed(&x[..self.horizon]),
                Cow::Borrowed(&x[self.horizon..]),
            ),
            Free::Only(Player::Cav, other) => (Cow::Borrowed(x), Cow::Borrowed(other.as_slice())),
            Free::Only(Player::Hdv, other) => (Cow::Borrowed(other.as_slice()), Cow::Borrowed(x)),
        }
    }
}

impl SmoothObjective for HorizonProblem<'_> {
    fn dim(&self) -> usize {
        match self.free {
            Free::Both => 2 * self.horizon,
            Free::Only(..) => self.horizon,
        }
    }

    fn value(&self, x: &[f64]) -> f64 {
        let (s1, s2) = self.split(x);
        horizon_cost(&self.weights, self.x0, &s1, &s2, self.cfg)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let (s1, s2) = self.split(x);
        let (g1, g2) = horizon_cost_gradient(&self.weights, self.x0, &s1, &s2, self.cfg);
        match self.free {
            Free::Both => [g1, g2].concat(),
            Free::Only(Player::Cav, _) => g1,
            Free::Only(Player::Hdv, _) => g2,
        }
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let (s1, s2) = self.split(x);
        let full = horizon_cost_hessian(&self.weights, self.x0, &s1, &s2, self.cfg);
        let h = self.horizon;
        match self.free {
            Free::Both => full,
            Free::Only(Player::Cav, _) => full.view((0, 0), (h, h)).into_owned(),
            Free::Only(Player::Hdv, _) => full.view((h, h), (h, h)).into_owned(),
        }
    }
}

/// Speed interval reachable from `v0` after `k + 1` steps, widened where
/// the configured limits cannot be met from the current speed.
fn speed_window(v0: f64, k: usize, cfg: &ScenarioConfig) -> (f64, f64) {
    let t = (k + 1) as f64 * cfg.dt;
    let lo = cfg.v_min.min(v0 + t * cfg.u_max);
    let hi = cfg.v_max.max(v0 + t * cfg.u_min);
    (lo, hi)
}

/// Linear inequalities on the CAV's accelerations (at `offset` in the
/// decision vector): the acceleration box and the per-step speed bounds.
pub fn cav_constraints(
    v0: f64,
    horizon: usize,
    offset: usize,
    cfg: &ScenarioConfig,
) -> Vec<LinearInequality> {
    let mut out = Vec::with_capacity(4 * horizon);
    for k in 0..horizon {
        out.push(LinearInequality {
            terms: vec![(offset + k, 1.0)],
            bound: cfg.u_max,
        });
        out.push(LinearInequality {
            terms: vec![(offset + k, -1.0)],
            bound: -cfg.u_min,
        });
        let (lo, hi) = speed_window(v0, k, cfg);
        let up: Vec<(usize, f64)> = (0..=k).map(|j| (offset + j, cfg.dt)).collect();
        let down: Vec<(usize, f64)> = (0..=k).map(|j| (offset + j, -cfg.dt)).collect();
        out.push(LinearInequality {
            terms: up,
            bound: hi - v0,
        });
        out.push(LinearInequality {
            terms: down,
            bound: v0 - lo,
        });
    }
    out
}

/// Clamps each CAV acceleration, in order, to the interval that keeps both
/// the acceleration and the resulting speed within bounds.
pub fn clamp_cav_sequence(v0: f64, accelerations: &mut [f64], cfg: &ScenarioConfig) {
    let mut v = v0;
    for (k, a) in accelerations.iter_mut().enumerate() {
        let (vlo, vhi) = speed_window(v0, k, cfg);
        let lo = cfg.u_min.max((vlo - v) / cfg.dt);
        let hi = cfg.u_max.min((vhi - v) / cfg.dt);
        *a = a.clamp(lo.min(hi), hi).clamp(cfg.u_min, cfg.u_max);
        v += cfg.dt * *a;
    }
}

fn check_inputs(x1_0: VehicleState, x2_0: VehicleState, cfg: &ScenarioConfig) -> Result<()> {
    if !x1_0.is_finite() || !x2_0.is_finite() {
        return Err(Error::SolverInit("initial states must be finite".into()));
    }
    if cfg.horizon == 0 {
        return Err(Error::SolverInit("horizon must be at least 1".into()));
    }
    Ok(())
}

/// Minimizes the horizon potential jointly over both vehicles' sequences.
///
/// The CAV's accelerations stay inside `[u_min, u_max]` and keep its speed
/// within `[v_min, v_max]` at every step; the HDV's are unconstrained.
pub fn solve(
    x1_0: VehicleState,
    x2_0: VehicleState,
    svo: &SvoPair,
    cfg: &ScenarioConfig,
    warm_start: Option<(&ControlSequence, &ControlSequence)>,
    opts: &SolverOptions,
) -> Result<SolverResult> {
    check_inputs(x1_0, x2_0, cfg)?;
    let h = cfg.horizon;
    let (mut s1, s2) = match warm_start {
        Some((a, b)) => {
            if a.len() != h || b.len() != h {
                return Err(Error::SolverInit(format!(
                    "warm start lengths ({}, {}) differ from the horizon {h}",
                    a.len(),
                    b.len()
                )));
            }
            (a.as_slice().to_vec(), b.as_slice().to_vec())
        }
        None => (vec![0.0; h], vec![0.0; h]),
    };
    if s1.iter().chain(&s2).any(|v| !v.is_finite()) {
        return Err(Error::SolverInit(
            "warm start contains non-finite values".into(),
        ));
    }
    clamp_cav_sequence(x1_0.speed, &mut s1, cfg);

    let problem = HorizonProblem {
        weights: StageWeights::potential(svo),
        x0: JointState { x1: x1_0, x2: x2_0 },
        cfg,
        free: Free::Both,
        horizon: h,
    };
    let constraints = cav_constraints(x1_0.speed, h, 0, cfg);
    let m = minimize(&problem, &constraints, [s1, s2].concat(), opts)?;

    let mut seq1 = m.x[..h].to_vec();
    let seq2 = m.x[h..].to_vec();
    clamp_cav_sequence(x1_0.speed, &mut seq1, cfg);
    let objective = problem.value(&[seq1.clone(), seq2.clone()].concat());
    Ok(SolverResult {
        seq1: seq1.into(),
        seq2: seq2.into(),
        objective,
        iterations: m.iterations,
        converged: m.converged,
        kkt_residual: m.kkt_residual,
    })
}

/// Minimizes one player's own horizon objective with the other player's
/// sequence held fixed. The CAV keeps its bounds; the HDV is unconstrained.
///
/// `initial` seeds the search (zeros otherwise).
#[allow(clippy::too_many_arguments)]
pub fn best_response(
    player: Player,
    frozen_seq: &ControlSequence,
    x1_0: VehicleState,
    x2_0: VehicleState,
    svo: &SvoPair,
    cfg: &ScenarioConfig,
    opts: &SolverOptions,
    initial: Option<&ControlSequence>,
) -> Result<ControlSequence> {
    check_inputs(x1_0, x2_0, cfg)?;
    let h = cfg.horizon;
    if frozen_seq.len() != h {
        return Err(Error::SolverInit(format!(
            "frozen sequence has length {}, horizon is {h}",
            frozen_seq.len()
        )));
    }
    let mut x0 = initial.map_or_else(|| vec![0.0; h], |s| s.as_slice().to_vec());
    if x0.len() != h {
        return Err(Error::SolverInit(
            "initial sequence length differs from the horizon".into(),
        ));
    }
    let phi = match player {
        Player::Cav => svo.phi1(),
        Player::Hdv => svo.phi2(),
    };
    let constraints = match player {
        Player::Cav => {
            clamp_cav_sequence(x1_0.speed, &mut x0, cfg);
            cav_constraints(x1_0.speed, h, 0, cfg)
        }
        Player::Hdv => Vec::new(),
    };
    let problem = HorizonProblem {
        weights: StageWeights::player(player, phi),
        x0: JointState { x1: x1_0, x2: x2_0 },
        cfg,
        free: Free::Only(player, frozen_seq.as_slice().to_vec()),
        horizon: h,
    };
    let m = minimize(&problem, &constraints, x0, opts)?;
    let mut x = m.x;
    if player == Player::Cav {
        clamp_cav_sequence(x1_0.speed, &mut x, cfg);
    }
    Ok(x.into())
}
