use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use svo_core::hdv::HdvPolicy;
use svo_core::scenario::{
    emit_csv, emit_snapshot_json, parse_svo, replay_estimates, run, RunError, RunSpec,
    SimulationLog,
};
use svo_core::{default_config, Error, ScenarioConfig};

#[derive(Parser)]
#[command(
    name = "svo-merge",
    version,
    about = "CAV/HDV merging with online SVO estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop merge and write log.csv and snapshots.json.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        /// Ground-truth HDV SVO: radians, `preset:egoistic` or `preset:altruistic`.
        #[arg(long, allow_hyphen_values = true)]
        hdv_svo: String,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
        /// Seconds between position snapshots.
        #[arg(long, default_value_t = 1.0)]
        snapshot_interval: f64,
    },
    /// Re-run the estimator offline over a logged run.
    EstimateReplay {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Initial estimate in radians (default pi/4).
        #[arg(long)]
        phi2_init: Option<f64>,
    },
    /// Sweep ground-truth SVO values and report crossing order and estimation error.
    Grid {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated SVO values (radians or presets).
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        svo_list: Vec<String>,
        /// Also write one log per run into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Key = value configuration file; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    max_steps: Option<usize>,
    /// Standard deviation of the HDV's action noise in m/s^2.
    #[arg(long, default_value_t = 0.0)]
    noise_std: f64,
    /// HDV lookahead in steps.
    #[arg(long, default_value_t = 1)]
    hdv_horizon: usize,
    /// Stop once both vehicles are this many metres past the safety disc.
    #[arg(long)]
    exit_margin: Option<f64>,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Config(Error),
    #[error("{0}")]
    Solver(Box<RunError>),
    #[error("{0}")]
    Other(Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Solver(_) => 2,
            CliError::Config(_) => 3,
            CliError::Other(_) => 1,
        }
    }
}

fn config_error(e: Error) -> CliError {
    CliError::Config(e)
}

fn load_config(path: Option<&Path>) -> Result<ScenarioConfig, CliError> {
    match path {
        Some(p) => ScenarioConfig::from_file(p).map_err(config_error),
        None => Ok(default_config()),
    }
}

fn build_spec(args: &RunArgs, svo: &str) -> Result<RunSpec, CliError> {
    let cfg = load_config(args.config.as_deref())?;
    let phi2 = parse_svo(svo).map_err(config_error)?;
    let hdv = HdvPolicy::new(phi2)
        .and_then(|p| p.with_noise(args.noise_std))
        .and_then(|p| p.with_horizon(args.hdv_horizon))
        .map_err(config_error)?;
    let mut spec = RunSpec::new(hdv, cfg);
    spec.seed = args.seed;
    if let Some(n) = args.max_steps {
        spec.stop.max_steps = n;
    }
    spec.stop.exit_margin = args.exit_margin;
    spec.validate().map_err(config_error)?;
    Ok(spec)
}

fn simulate_one(spec: &RunSpec) -> Result<SimulationLog, CliError> {
    run(spec).map_err(|e| CliError::Solver(Box::new(e)))
}

fn summary_line(phi2: f64, log: &SimulationLog) -> String {
    let est = log.final_estimate().unwrap_or(f64::NAN);
    format!(
        "{phi2:.6}\t{}\t{:.3}\t{est:.6}\t{:.6}",
        log.crossing_order(),
        log.min_squared_distance().sqrt(),
        (est - phi2).abs()
    )
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| {
        CliError::Other(Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })
    })
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate {
            run,
            hdv_svo,
            out,
            snapshot_interval,
        } => {
            let spec = build_spec(&run, &hdv_svo)?;
            create_dir(&out)?;
            let (log, failure) = match simulate_one(&spec) {
                Ok(log) => (log, None),
                Err(CliError::Solver(e)) => (e.partial.clone(), Some(CliError::Solver(e))),
                Err(e) => return Err(e),
            };
            if !log.is_empty() {
                emit_csv(&log, out.join("log.csv")).map_err(CliError::Other)?;
                emit_snapshot_json(&log, out.join("snapshots.json"), snapshot_interval)
                    .map_err(config_error)?;
            }
            if let Some(e) = failure {
                return Err(e);
            }
            println!("phi2_true\torder\tmin_dist\tphi2_est\tabs_err");
            println!("{}", summary_line(spec.hdv.true_phi2(), &log));
            Ok(())
        }
        Command::EstimateReplay {
            log,
            config,
            phi2_init,
        } => {
            let cfg = load_config(config.as_deref())?;
            let log = SimulationLog::read_csv(&log).map_err(config_error)?;
            let est = replay_estimates(&log, &cfg, phi2_init).map_err(config_error)?;
            println!("t,phi2_est");
            for (r, e) in log.records.iter().zip(&est) {
                println!("{:.6},{e:.12}", r.t);
            }
            Ok(())
        }
        Command::Grid { run, svo_list, out } => {
            let specs = svo_list
                .iter()
                .map(|s| build_spec(&run, s))
                .collect::<Result<Vec<_>, _>>()?;
            if let Some(dir) = &out {
                create_dir(dir)?;
            }
            let logs: Vec<_> = specs.par_iter().map(simulate_one).collect();
            println!("phi2_true\torder\tmin_dist\tphi2_est\tabs_err");
            let mut first_error = None;
            for (i, (spec, log)) in specs.iter().zip(logs).enumerate() {
                match log {
                    Ok(log) => {
                        if let Some(dir) = &out {
                            emit_csv(&log, dir.join(format!("run_{i}.csv")))
                                .map_err(CliError::Other)?;
                        }
                        println!("{}", summary_line(spec.hdv.true_phi2(), &log));
                    }
                    Err(e) => {
                        println!("{:.6}\tfailed: {e}", spec.hdv.true_phi2());
                        first_error.get_or_insert(e);
                    }
                }
            }
            first_error.map_or(Ok(()), Err)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("svo-merge: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
