//! Reference implementations written directly from the model equations,
//! sharing no code with the library.

#![allow(dead_code)]

use svo_core::ScenarioConfig;

pub fn step(p: f64, v: f64, a: f64, dt: f64) -> (f64, f64) {
    (p + dt * v + 0.5 * dt * dt * a, v + dt * a)
}

pub fn barrier(p1: f64, p2: f64, cfg: &ScenarioConfig) -> f64 {
    let d = p1 * p1 + p2 * p2 - cfg.safety_radius * cfg.safety_radius;
    let eps = cfg.barrier_epsilon;
    if d > eps {
        cfg.w5 / d
    } else {
        cfg.w5 / eps - cfg.w5 / (eps * eps) * (d - eps)
    }
}

/// Per-stage (cav ego, hdv ego, shared) costs along the horizon.
pub fn stage_terms(
    x1: (f64, f64),
    x2: (f64, f64),
    s1: &[f64],
    s2: &[f64],
    cfg: &ScenarioConfig,
) -> Vec<(f64, f64, f64)> {
    let (mut a, mut b) = (x1, x2);
    s1.iter()
        .zip(s2)
        .map(|(&u1, &u2)| {
            a = step(a.0, a.1, u1, cfg.dt);
            b = step(b.0, b.1, u2, cfg.dt);
            (
                cfg.w1 * u1 * u1 + cfg.w2 * (a.1 - cfg.v_max).powi(2),
                cfg.w3 * u2 * u2 + cfg.w4 * (b.1 - cfg.v_max).powi(2),
                barrier(a.0, b.0, cfg),
            )
        })
        .collect()
}

pub fn cav_cost(
    phi1: f64,
    x1: (f64, f64),
    x2: (f64, f64),
    s1: &[f64],
    s2: &[f64],
    cfg: &ScenarioConfig,
) -> f64 {
    stage_terms(x1, x2, s1, s2, cfg)
        .iter()
        .map(|(l1, _, l12)| phi1.cos() * l1 + phi1.sin() * l12)
        .sum()
}

pub fn hdv_cost(
    phi2: f64,
    x1: (f64, f64),
    x2: (f64, f64),
    s1: &[f64],
    s2: &[f64],
    cfg: &ScenarioConfig,
) -> f64 {
    stage_terms(x1, x2, s1, s2, cfg)
        .iter()
        .map(|(_, l2, l12)| phi2.cos() * l2 + phi2.sin() * l12)
        .sum()
}

pub fn potential(
    phi1: f64,
    phi2: f64,
    x1: (f64, f64),
    x2: (f64, f64),
    s1: &[f64],
    s2: &[f64],
    cfg: &ScenarioConfig,
) -> f64 {
    let (c1, s1w) = (phi1.cos(), phi1.sin());
    let (c2, s2w) = (phi2.cos(), phi2.sin());
    stage_terms(x1, x2, s1, s2, cfg)
        .iter()
        .map(|(l1, l2, l12)| c1 * s2w * l1 + s1w * c2 * l2 + s1w * s2w * l12)
        .sum()
}

/// One-step HDV objective `cos φ2 · l2 + sin φ2 · l12` with the CAV's next
/// position given.
pub fn hdv_step_objective(
    p1_next: f64,
    x2: (f64, f64),
    u2: f64,
    phi2: f64,
    cfg: &ScenarioConfig,
) -> f64 {
    let (p2n, v2n) = step(x2.0, x2.1, u2, cfg.dt);
    let l2 = cfg.w3 * u2 * u2 + cfg.w4 * (v2n - cfg.v_max).powi(2);
    phi2.cos() * l2 + phi2.sin() * barrier(p1_next, p2n, cfg)
}

/// Global minimizer over [lo, hi]: dense scan, then golden-section search
/// around the best cell.
pub fn argmin_1d(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> (f64, f64) {
    let n = 20_000;
    let h = (hi - lo) / n as f64;
    let mut best = (lo, f(lo));
    for i in 1..=n {
        let x = lo + i as f64 * h;
        let fx = f(x);
        if fx < best.1 {
            best = (x, fx);
        }
    }
    let (mut a, mut b) = ((best.0 - h).max(lo), (best.0 + h).min(hi));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() < 1e-13 * (1.0 + a.abs()) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    let fx = f(x);
    if fx <= best.1 {
        (x, fx)
    } else {
        best
    }
}

pub fn hdv_argmin(p1_next: f64, x2: (f64, f64), phi2: f64, cfg: &ScenarioConfig) -> (f64, f64) {
    argmin_1d(
        |u| hdv_step_objective(p1_next, x2, u, phi2, cfg),
        -50.0,
        50.0,
    )
}
