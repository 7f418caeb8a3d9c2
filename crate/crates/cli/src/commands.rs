use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use caim_core::array_model::{build_grid, SteeringGrid};
use caim_core::estimator::{build_caim_qubo, decode_caim, estimate_aim, estimate_l1, ApEstimate};
use caim_core::eval::{
    parameter_sweep, run_experiment, score, write_parameter_sweep, write_report, ExperimentSpec,
    Method, MetricsReport, ParameterPoint,
};
use caim_core::qubo::QuboProblem;
use caim_core::scene::{synthesize, ApSnapshot, SnapshotRecord};
use caim_core::solver::{anneal, brute_force, write_trace_csv, BRUTE_FORCE_MAX_BITS};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const ESTIMATES_FORMAT: &str = "caim-estimates/1";

/// Largest QUBO `--verify-brute-force` will enumerate.
pub const VERIFY_MAX_BITS: usize = 20;

pub fn snapshot_path(dir: &Path, ap: usize) -> PathBuf {
    dir.join(format!("snapshot_ap{ap}.json"))
}

/// Writes `snapshot_ap<k>.json` for every AP of one scene drawn from the
/// configured template with seed `experiment.seed`.
pub fn cmd_simulate(config: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    config.validate()?;
    let grid = config.grid.build()?;
    let scene = config.scene.instantiate(&grid, config.experiment.seed);
    let snapshots = synthesize(&scene, &grid)?;
    fs::create_dir_all(out)?;
    let mut paths = Vec::with_capacity(snapshots.len());
    for (p, snap) in snapshots.into_iter().enumerate() {
        let path = snapshot_path(out, p + 1);
        SnapshotRecord::new(p + 1, &scene, &grid, snap).write(&path)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Reads `snapshot_ap1.json`, `snapshot_ap2.json`, ... until the first gap
/// and rebuilds the grid they were simulated on.
pub fn load_snapshots(dir: &Path) -> Result<(SteeringGrid, Vec<ApSnapshot>)> {
    let mut records = Vec::new();
    loop {
        let path = snapshot_path(dir, records.len() + 1);
        if !path.exists() {
            break;
        }
        records.push(SnapshotRecord::read(&path)?);
    }
    let Some(first) = records.first() else {
        return Err(CliError::Input(format!(
            "no snapshot_ap1.json in {}",
            dir.display()
        )));
    };
    for r in &records {
        if r.geometry != first.geometry
            || r.num_bins != first.num_bins
            || r.theta_min != first.theta_min
            || r.theta_max != first.theta_max
        {
            return Err(CliError::Input(format!(
                "snapshot_ap{} was simulated on a different grid than snapshot_ap1",
                r.ap
            )));
        }
    }
    let grid = build_grid(
        first.geometry,
        first.num_bins,
        first.theta_min,
        first.theta_max,
    )?;
    Ok((grid, records.into_iter().map(|r| r.snapshot).collect()))
}

pub fn cmd_build_qubo(config: &RunConfig, input: &Path, out: &Path) -> Result<QuboProblem> {
    config.validate()?;
    let (grid, snapshots) = load_snapshots(input)?;
    let (problem, _) = build_caim_qubo(&snapshots, &grid, &config.ising)?;
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent)?;
    }
    problem.write_text(BufWriter::new(fs::File::create(out)?))?;
    Ok(problem)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApReport {
    pub ap: usize,
    pub orientation_deg: f64,
    pub truth_los_deg: f64,
    pub los_error_deg: f64,
    pub estimate: ApEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub format: String,
    pub method: Method,
    pub seed: u64,
    pub aps: Vec<ApReport>,
    /// QUBO energy of the returned state (CAIM only).
    pub best_energy: Option<f64>,
    /// Global minimum from exhaustive search, when requested.
    pub brute_force_energy: Option<f64>,
}

/// Estimates the AoAs of a simulated snapshot set and writes
/// `estimates.json`; CAIM additionally writes `energy_trace.csv`.
pub fn cmd_solve(
    config: &RunConfig,
    input: &Path,
    out: &Path,
    method: Method,
    verify_brute_force: bool,
) -> Result<SolveReport> {
    config.validate()?;
    let (grid, snapshots) = load_snapshots(input)?;
    fs::create_dir_all(out)?;

    let mut best_energy = None;
    let mut brute_force_energy = None;
    let estimates = match method {
        Method::Caim => {
            let (problem, prepared) = build_caim_qubo(&snapshots, &grid, &config.ising)?;
            if verify_brute_force && problem.num_vars() > VERIFY_MAX_BITS {
                return Err(CliError::Input(format!(
                    "--verify-brute-force needs at most {VERIFY_MAX_BITS} variables, problem has {}",
                    problem.num_vars()
                )));
            }
            let solve = anneal(&problem, &config.ising.anneal)?;
            write_trace_csv(
                BufWriter::new(fs::File::create(out.join("energy_trace.csv"))?),
                &solve.energy_trace,
            )?;
            if verify_brute_force {
                debug_assert!(problem.num_vars() <= BRUTE_FORCE_MAX_BITS);
                let (_, optimum) = brute_force(&problem)?;
                brute_force_energy = Some(optimum);
                if solve.best_energy > optimum + 1e-9 * optimum.abs().max(1.0) {
                    return Err(CliError::NotOptimal {
                        annealed: solve.best_energy,
                        optimum,
                    });
                }
            }
            best_energy = Some(solve.best_energy);
            decode_caim(&solve.best_state, &problem, &prepared, &grid)?
        }
        Method::Aim | Method::L1 if verify_brute_force => {
            return Err(CliError::Input(
                "--verify-brute-force applies to --method caim only".into(),
            ));
        }
        Method::Aim => estimate_aim(&snapshots, &grid, &config.ising)?,
        Method::L1 => estimate_l1(&snapshots, &grid, &config.l1)?,
    };

    let aps = estimates
        .into_iter()
        .zip(&snapshots)
        .enumerate()
        .map(|(p, (estimate, snap))| ApReport {
            ap: p + 1,
            orientation_deg: snap.orientation_deg,
            truth_los_deg: snap.los_angle_deg(),
            los_error_deg: score(&estimate, snap, &grid).los_error_deg,
            estimate,
        })
        .collect();
    let report = SolveReport {
        format: ESTIMATES_FORMAT.to_string(),
        method,
        seed: config.ising.anneal.seed,
        aps,
        best_energy,
        brute_force_energy,
    };
    let file = fs::File::create(out.join("estimates.json"))?;
    serde_json::to_writer_pretty(BufWriter::new(file), &report)?;
    Ok(report)
}

pub fn cmd_evaluate(config: &RunConfig, out: &Path) -> Result<MetricsReport> {
    config.validate()?;
    let spec = config.spec();
    let report = run_experiment(&spec)?;
    write_report(&report, &spec, out)?;
    Ok(report)
}

/// Runs the `(γ, μ)` grid with `sweep.trials` trials per point and writes
/// `parameter_sweep.csv`.
pub fn cmd_sweep(config: &RunConfig, out: &Path) -> Result<Vec<ParameterPoint>> {
    config.validate()?;
    let spec = ExperimentSpec {
        trials: config.sweep.trials,
        ..config.spec()
    };
    let points: Vec<(f64, f64)> = config
        .sweep
        .gammas
        .iter()
        .flat_map(|&g| config.sweep.mus.iter().map(move |&m| (g, m)))
        .collect();
    let result = parameter_sweep(&spec, &points)?;
    fs::create_dir_all(out)?;
    write_parameter_sweep(&result, &out.join("parameter_sweep.csv"))?;
    Ok(result)
}
