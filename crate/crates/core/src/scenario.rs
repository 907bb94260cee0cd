//! Closed-loop merging simulation, logging and plot-data output.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::rngs::StdRng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::dynamics;
use crate::error::{Error, Result};
use crate::estimator::{self, EstimatorState};
use crate::hdv::{hdv_action, HdvPolicy};
use crate::objectives::potential_cost;
use crate::planner::{plan_step, PlannerState};
use crate::solver::SolverOptions;
use crate::types::{
    default_config, Control, ScenarioConfig, SvoPair, TrajectorySegment, VehicleState,
};

/// Ground-truth SVO of the egoistic preset driver.
pub const EGOISTIC_PHI2: f64 = PI / 12.0;
/// Ground-truth SVO of the altruistic preset driver.
pub const ALTRUISTIC_PHI2: f64 = 5.0 * PI / 12.0;

pub const CSV_HEADER: [&str; 12] = [
    "t",
    "p1",
    "v1",
    "a1",
    "p2",
    "v2",
    "a2",
    "phi1",
    "phi2_est",
    "phi2_true",
    "potential",
    "dist",
];

/// Parses `egoistic`, `altruistic`, `preset:<name>` or a value in radians.
pub fn parse_svo(text: &str) -> Result<f64> {
    let t = text.trim();
    let name = t.strip_prefix("preset:").unwrap_or(t);
    let phi = match name {
        "egoistic" => EGOISTIC_PHI2,
        "altruistic" => ALTRUISTIC_PHI2,
        _ => t
            .parse::<f64>()
            .map_err(|_| Error::InvalidConfig(format!("unrecognised SVO `{text}`")))?,
    };
    crate::types::check_svo_angle("hdv svo", phi)?;
    Ok(phi)
}

/// When a run ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopCondition {
    pub max_steps: usize,
    /// Stop early once both vehicles are this far past the conflict point's
    /// safety disc (`position > r + margin`).
    pub exit_margin: Option<f64>,
}

impl Default for StopCondition {
    fn default() -> Self {
        Self {
            max_steps: 300,
            exit_margin: None,
        }
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub cav_initial: VehicleState,
    pub hdv_initial: VehicleState,
    pub hdv: HdvPolicy,
    pub config: ScenarioConfig,
    pub phi2_init: Option<f64>,
    pub stop: StopCondition,
    pub seed: u64,
    pub solver: SolverOptions,
}

impl RunSpec {
    /// Both vehicles at the control-zone entry at 20 m/s.
    pub fn new(hdv: HdvPolicy, config: ScenarioConfig) -> Self {
        let entry = VehicleState::new(-config.control_zone_length, 20.0);
        Self {
            cav_initial: entry,
            hdv_initial: entry,
            hdv,
            config,
            phi2_init: None,
            stop: StopCondition::default(),
            seed: 0,
            solver: SolverOptions::default(),
        }
    }

    /// Default configuration with a noise-free driver of the given SVO.
    pub fn with_true_svo(phi2: f64) -> Result<Self> {
        Ok(Self::new(HdvPolicy::new(phi2)?, default_config()))
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        for (name, x) in [("CAV", self.cav_initial), ("HDV", self.hdv_initial)] {
            if !x.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "{name} initial state is not finite"
                )));
            }
            if x.position < -self.config.control_zone_length {
                return Err(Error::InvalidConfig(format!(
                    "{name} starts at {} before the control-zone entry {}",
                    x.position, -self.config.control_zone_length
                )));
            }
        }
        if self.stop.max_steps == 0 {
            return Err(Error::InvalidConfig("max_steps must be positive".into()));
        }
        if let Some(m) = self.stop.exit_margin {
            if !(m >= 0.0 && m.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "exit margin must be finite and >= 0, got {m}"
                )));
            }
        }
        Ok(())
    }
}

/// One logged time step. `a1`, `a2` are the accelerations applied from `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub p1: f64,
    pub v1: f64,
    pub a1: f64,
    pub p2: f64,
    pub v2: f64,
    pub a2: f64,
    pub phi1: f64,
    pub phi2_est: f64,
    pub phi2_true: f64,
    pub potential: f64,
    pub dist: f64,
}

impl StepRecord {
    pub fn cav(&self) -> VehicleState {
        VehicleState::new(self.p1, self.v1)
    }

    pub fn hdv(&self) -> VehicleState {
        VehicleState::new(self.p2, self.v2)
    }

    fn fields(&self) -> [f64; 12] {
        [
            self.t,
            self.p1,
            self.v1,
            self.a1,
            self.p2,
            self.v2,
            self.a2,
            self.phi1,
            self.phi2_est,
            self.phi2_true,
            self.potential,
            self.dist,
        ]
    }

    fn from_fields(f: &[f64]) -> Self {
        Self {
            t: f[0],
            p1: f[1],
            v1: f[2],
            a1: f[3],
            p2: f[4],
            v2: f[5],
            a2: f[6],
            phi1: f[7],
            phi2_est: f[8],
            phi2_true: f[9],
            potential: f[10],
            dist: f[11],
        }
    }
}

/// Which vehicle crossed the conflict point first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CrossingOrder {
    CavFirst,
    HdvFirst,
    Simultaneous,
    Incomplete,
}

impl std::fmt::Display for CrossingOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CrossingOrder::CavFirst => "cav-first",
            CrossingOrder::HdvFirst => "hdv-first",
            CrossingOrder::Simultaneous => "simultaneous",
            CrossingOrder::Incomplete => "incomplete",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimulationLog {
    pub dt: f64,
    pub records: Vec<StepRecord>,
}

impl SimulationLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// First step index at which the CAV's position is at or past 0.
    pub fn cav_reaches_conflict(&self) -> Option<usize> {
        self.records.iter().position(|r| r.p1 >= 0.0)
    }

    /// First step index at which the HDV's position is at or past 0.
    pub fn hdv_reaches_conflict(&self) -> Option<usize> {
        self.records.iter().position(|r| r.p2 >= 0.0)
    }

    pub fn crossing_order(&self) -> CrossingOrder {
        match (self.cav_reaches_conflict(), self.hdv_reaches_conflict()) {
            (Some(c), Some(h)) if c < h => CrossingOrder::CavFirst,
            (Some(c), Some(h)) if h < c => CrossingOrder::HdvFirst,
            (Some(_), Some(_)) => CrossingOrder::Simultaneous,
            (Some(_), None) => CrossingOrder::CavFirst,
            (None, Some(_)) => CrossingOrder::HdvFirst,
            (None, None) => CrossingOrder::Incomplete,
        }
    }

    /// Smallest `p1² + p2²` over the log.
    pub fn min_squared_distance(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.p1 * r.p1 + r.p2 * r.p2)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn final_estimate(&self) -> Option<f64> {
        self.records.last().map(|r| r.phi2_est)
    }

    /// Reads a log written by [`emit_csv`].
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::Reader::from_reader(file);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        if header != CSV_HEADER {
            return Err(Error::InvalidConfig(format!(
                "{}: unexpected header {header:?}",
                path.display()
            )));
        }
        let mut records = Vec::new();
        for row in rdr.records() {
            let row = row?;
            let vals = row
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
            records.push(StepRecord::from_fields(&vals));
        }
        let dt = match records.as_slice() {
            [a, b, ..] => b.t - a.t,
            _ => 0.0,
        };
        Ok(Self { dt, records })
    }
}

/// Solver failure mid-run, with everything logged up to that point.
#[derive(Debug, thiserror::Error)]
#[error("run aborted at step {step}: {source}")]
pub struct RunError {
    pub step: usize,
    pub partial: SimulationLog,
    #[source]
    pub source: Error,
}

/// Runs the closed loop until the stop condition.
///
/// Each step: push the previous step's segment to the estimator (when the HDV
/// was inside the control zone), update the estimate, plan the CAV's action
/// with that estimate, let the HDV best-respond to that action, propagate
/// both vehicles and log.
pub fn run(spec: &RunSpec) -> std::result::Result<SimulationLog, RunError> {
    let fail = |step, partial: &SimulationLog, source| RunError {
        step,
        partial: partial.clone(),
        source,
    };
    let cfg = &spec.config;
    let mut log = SimulationLog {
        dt: cfg.dt,
        records: Vec::with_capacity(spec.stop.max_steps + 1),
    };
    spec.validate().map_err(|e| fail(0, &log, e))?;
    let mut est: EstimatorState =
        estimator::initialize(spec.phi2_init, cfg).map_err(|e| fail(0, &log, e))?;
    let mut planner = PlannerState::default();
    let mut rng = StdRng::seed_from_u64(spec.seed);

    let (mut x1, mut x2) = (spec.cav_initial, spec.hdv_initial);
    let mut previous: Option<TrajectorySegment> = None;

    for k in 0..=spec.stop.max_steps {
        if let Some(seg) = previous.take() {
            if cfg.in_control_zone(seg.x2.position) {
                est.push_segment(seg, cfg).map_err(|e| fail(k, &log, e))?;
            }
        }
        let phi2_est = est.update(cfg);

        let (u1, phi1) = if cfg.in_control_zone(x1.position) {
            let out = plan_step(x1, x2, phi2_est, &planner, cfg, &spec.solver)
                .map_err(|e| fail(k, &log, e))?;
            planner = out.new_state;
            (out.u1_apply, planner.current_svo.phi1())
        } else {
            planner.previous_solution = None;
            (Control::ZERO, estimator_complement(phi2_est))
        };
        let u2 = hdv_action(&spec.hdv, x1, x2, u1, cfg, &mut rng);

        let (x1_next, x2_next) = (
            dynamics::step(x1, u1, cfg.dt),
            dynamics::step(x2, u2, cfg.dt),
        );
        let svo = SvoPair::new(phi1, phi2_est).map_err(|e| fail(k, &log, e))?;
        let potential = potential_cost(x1_next, u1, x2_next, u2, &svo, cfg);
        log.records.push(StepRecord {
            t: k as f64 * cfg.dt,
            p1: x1.position,
            v1: x1.speed,
            a1: u1.acceleration,
            p2: x2.position,
            v2: x2.speed,
            a2: u2.acceleration,
            phi1,
            phi2_est,
            phi2_true: spec.hdv.true_phi2(),
            potential,
            dist: x1.position.hypot(x2.position),
        });

        if k == spec.stop.max_steps || both_exited(spec, x1, x2) {
            break;
        }
        previous = Some(TrajectorySegment {
            x1,
            x2,
            x1_next,
            x2_next,
            u1,
            u2,
        });
        x1 = x1_next;
        x2 = x2_next;
    }
    Ok(log)
}

fn estimator_complement(phi2: f64) -> f64 {
    std::f64::consts::FRAC_PI_2 - phi2
}

fn both_exited(spec: &RunSpec, x1: VehicleState, x2: VehicleState) -> bool {
    match spec.stop.exit_margin {
        Some(m) => {
            let line = spec.config.safety_radius + m;
            x1.position > line && x2.position > line
        }
        None => false,
    }
}

fn format_value(x: f64) -> String {
    format!("{x:.15e}")
}

/// Writes the log as CSV with the fixed column set of [`CSV_HEADER`].
pub fn emit_csv(log: &SimulationLog, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if log.is_empty() {
        return Err(Error::Precondition("cannot write an empty log".into()));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(CSV_HEADER)?;
    for r in &log.records {
        w.write_record(r.fields().iter().map(|&x| format_value(x)))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub p1: f64,
    pub p2: f64,
}

/// Positions every `interval_s` seconds, starting at the first record.
pub fn snapshots(log: &SimulationLog, interval_s: f64) -> Result<Vec<Snapshot>> {
    if log.is_empty() {
        return Err(Error::Precondition("cannot sample an empty log".into()));
    }
    let ratio = interval_s / log.dt;
    let stride = ratio.round();
    if interval_s.is_nan()
        || interval_s <= 0.0
        || !ratio.is_finite()
        || stride < 1.0
        || (ratio - stride).abs() > 1e-9 * ratio.max(1.0)
    {
        return Err(Error::Precondition(format!(
            "snapshot interval {interval_s} is not a positive multiple of dt = {}",
            log.dt
        )));
    }
    Ok(log
        .records
        .iter()
        .step_by(stride as usize)
        .map(|r| Snapshot {
            t: r.t,
            p1: r.p1,
            p2: r.p2,
        })
        .collect())
}

/// Writes [`snapshots`] as a JSON array of `{t, p1, p2}`.
pub fn emit_snapshot_json(
    log: &SimulationLog,
    path: impl AsRef<Path>,
    interval_s: f64,
) -> Result<()> {
    let path = path.as_ref();
    let snaps = snapshots(log, interval_s)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, &snaps)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Re-runs the estimator offline over a logged run and returns the estimate
/// after each step, using the same segment rule as [`run`].
pub fn replay_estimates(
    log: &SimulationLog,
    cfg: &ScenarioConfig,
    phi2_init: Option<f64>,
) -> Result<Vec<f64>> {
    let mut est = estimator::initialize(phi2_init, cfg)?;
    let mut out = Vec::with_capacity(log.len());
    out.push(est.update(cfg));
    for w in log.records.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if cfg.in_control_zone(a.p2) {
            let seg = TrajectorySegment {
                x1: a.cav(),
                x2: a.hdv(),
                x1_next: b.cav(),
                x2_next: b.hdv(),
                u1: Control::new(a.a1),
                u2: Control::new(a.a2),
            };
            est.push_segment(seg, cfg)?;
        }
        out.push(est.update(cfg));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn synthetic_log(n: usize) -> SimulationLog {
        SimulationLog {
            dt: 0.1,
            records: (0..n)
                .map(|k| {
                    let t = k as f64 * 0.1;
                    StepRecord {
                        t,
                        p1: -120.0 + 20.0 * t + 1.0 / 3.0,
                        v1: 20.0,
                        a1: 0.0,
                        p2: -100.0 + 20.0 * t,
                        v2: 20.0,
                        a2: 0.0,
                        phi1: 0.1 * k as f64,
                        phi2_est: std::f64::consts::FRAC_PI_4,
                        phi2_true: PI / 7.0,
                        potential: 1.234_567_890_123e5,
                        dist: 1e-7 * k as f64,
                    }
                })
                .collect(),
        }
    }

    #[test]
    fn csv_row_count_and_header() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("log.csv");
        emit_csv(&synthetic_log(3), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(
            lines[0],
            "t,p1,v1,a1,p2,v2,a2,phi1,phi2_est,phi2_true,potential,dist"
        );
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("log.csv");
        let log = synthetic_log(25);
        emit_csv(&log, &path).unwrap();
        let back = SimulationLog::read_csv(&path).unwrap();
        assert_eq!(back.len(), log.len());
        for (a, b) in log.records.iter().zip(&back.records) {
            for (x, y) in a.fields().iter().zip(b.fields()) {
                assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0), "{x} vs {y}");
            }
        }
    }

    #[test]
    fn csv_errors() {
        let dir = tempdir().unwrap();
        assert!(matches!(
            emit_csv(&SimulationLog::default(), dir.path().join("x.csv")),
            Err(Error::Precondition(_))
        ));
        assert!(matches!(
            emit_csv(&synthetic_log(2), dir.path().join("missing/x.csv")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn snapshot_sampling() {
        let log = synthetic_log(51);
        let s = snapshots(&log, 1.0).unwrap();
        assert_eq!(s.len(), 6);
        let ts: Vec<f64> = s.iter().map(|x| x.t).collect();
        for (k, t) in ts.iter().enumerate() {
            assert!((t - k as f64).abs() < 1e-12);
        }
        assert_eq!(snapshots(&log, 0.1).unwrap().len(), 51);
        assert!(matches!(snapshots(&log, 0.15), Err(Error::Precondition(_))));
        assert!(snapshots(&log, 0.0).is_err());
        assert!(snapshots(&SimulationLog::default(), 1.0).is_err());
    }

    #[test]
    fn snapshot_json_shape() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("s.json");
        emit_snapshot_json(&synthetic_log(21), &path, 1.0).unwrap();
        let v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        let arr = v.as_array().unwrap();
        assert_eq!(arr.len(), 3);
        for item in arr {
            let o = item.as_object().unwrap();
            assert_eq!(o.len(), 3);
            assert!(o.contains_key("t") && o.contains_key("p1") && o.contains_key("p2"));
        }
    }

    #[test]
    fn svo_parsing() {
        assert_eq!(parse_svo("preset:egoistic").unwrap(), EGOISTIC_PHI2);
        assert_eq!(parse_svo("altruistic").unwrap(), ALTRUISTIC_PHI2);
        assert_eq!(parse_svo("0.5").unwrap(), 0.5);
        assert!(parse_svo("2.0").is_err());
        assert!(parse_svo("preset:grumpy").is_err());
    }

    #[test]
    fn crossing_order_logic() {
        let mut log = synthetic_log(80);
        assert_eq!(log.crossing_order(), CrossingOrder::HdvFirst);
        for r in &mut log.records {
            std::mem::swap(&mut r.p1, &mut r.p2);
        }
        assert_eq!(log.crossing_order(), CrossingOrder::CavFirst);
        assert_eq!(synthetic_log(3).crossing_order(), CrossingOrder::Incomplete);
    }

    #[test]
    fn spec_validation() {
        let mut spec = RunSpec::with_true_svo(0.5).unwrap();
        spec.cav_initial.position = -121.0;
        assert!(spec.validate().is_err());
        let mut spec = RunSpec::with_true_svo(0.5).unwrap();
        spec.stop.max_steps = 0;
        assert!(spec.validate().is_err());
        assert!(RunSpec::with_true_svo(0.5).unwrap().validate().is_ok());
    }

    #[test]
    fn short_run_is_contiguous_and_stops_early() {
        let mut spec = RunSpec::with_true_svo(PI / 4.0).unwrap();
        spec.stop.max_steps = 12;
        let log = run(&spec).unwrap();
        assert_eq!(log.len(), 13);
        for w in log.records.windows(2) {
            assert!((w[1].t - w[0].t - 0.1).abs() < 1e-12);
        }

        let mut spec = RunSpec::with_true_svo(PI / 4.0).unwrap();
        spec.cav_initial = VehicleState::new(30.0, 20.0);
        spec.hdv_initial = VehicleState::new(31.0, 20.0);
        spec.stop.exit_margin = Some(5.0);
        assert_eq!(run(&spec).unwrap().len(), 1);
    }

    #[test]
    fn replay_reproduces_online_estimates() {
        let mut spec = RunSpec::with_true_svo(PI / 3.0).unwrap();
        spec.stop.max_steps = 40;
        let log = run(&spec).unwrap();
        let replay = replay_estimates(&log, &spec.config, None).unwrap();
        assert_eq!(replay.len(), log.len());
        for (a, b) in replay.iter().zip(&log.records) {
            assert!((a - b.phi2_est).abs() < 1e-9, "{a} vs {}", b.phi2_est);
        }
    }
}
