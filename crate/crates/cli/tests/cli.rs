use std::fs;
use std::path::Path;
use std::process::Command;

use caim_cli::commands::{load_snapshots, snapshot_path};
use caim_cli::{cmd_build_qubo, cmd_evaluate, cmd_simulate, cmd_solve, cmd_sweep, RunConfig};
use caim_core::eval::Method;
use caim_core::qubo::QuboProblem;
use caim_core::scene::SnapshotRecord;

fn tiny_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.grid.num_elements = 4;
    cfg.grid.num_bins = 8;
    cfg.scene.orientations_deg = vec![0.0, 45.0];
    cfg.scene.num_paths = 1;
    cfg.scene.snr_db = None;
    cfg.ising.anneal = Default::default();
    cfg
}

fn small_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.grid.num_bins = 90;
    cfg.grid.theta_min = -90.0;
    cfg.grid.theta_max = 90.0;
    cfg.scene.orientations_deg = vec![120.0, 224.0, 200.0];
    cfg.scene.num_paths = 3;
    cfg.experiment.trials = 2;
    cfg
}

#[test]
fn simulate_default_writes_five_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let paths = cmd_simulate(&RunConfig::default(), dir.path()).unwrap();
    assert_eq!(paths.len(), 5);
    for (k, p) in paths.iter().enumerate() {
        assert_eq!(p, &snapshot_path(dir.path(), k + 1));
        let rec = SnapshotRecord::read(p).unwrap();
        assert_eq!(rec.ap, k + 1);
        assert_eq!(rec.snapshot.received.len(), 8);
        assert_eq!(rec.snapshot.truth.len(), 16);
    }
}

#[test]
fn simulate_is_seed_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let cfg = small_config();
    cmd_simulate(&cfg, a.path()).unwrap();
    cmd_simulate(&cfg, b.path()).unwrap();
    let mut other = cfg.clone();
    other.experiment.seed += 1;
    cmd_simulate(&other, c.path()).unwrap();
    let read = |d: &Path| fs::read(snapshot_path(d, 1)).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    assert_ne!(read(a.path()), read(c.path()));
}

#[test]
fn off_grid_flag_moves_angles_off_the_grid() {
    let mut cfg = small_config();
    cfg.scene.on_grid = false;
    let dir = tempfile::tempdir().unwrap();
    cmd_simulate(&cfg, dir.path()).unwrap();
    let (grid, snaps) = load_snapshots(dir.path()).unwrap();
    for s in &snaps {
        assert!(s.los_bin.is_none());
        assert!(!grid.is_on_grid(s.los_angle_deg(), 1e-6));
    }
}

#[test]
fn solve_writes_estimates_and_trace() {
    let cfg = small_config();
    let snaps = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    cmd_simulate(&cfg, snaps.path()).unwrap();
    let report = cmd_solve(&cfg, snaps.path(), out.path(), Method::Caim, false).unwrap();
    assert_eq!(report.aps.len(), 3);
    assert!(report.best_energy.is_some());
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.path().join("estimates.json")).unwrap())
            .unwrap();
    assert_eq!(json["format"], "caim-estimates/1");
    assert_eq!(json["method"], "caim");
    let trace = fs::read_to_string(out.path().join("energy_trace.csv")).unwrap();
    assert!(trace.starts_with("sweep,current_energy,best_energy\n"));
    assert!(trace.lines().count() > 2);
}

#[test]
fn solve_mu_zero_matches_aim() {
    let mut cfg = tiny_config();
    cfg.ising.mu = 0.0;
    let snaps = tempfile::tempdir().unwrap();
    cmd_simulate(&cfg, snaps.path()).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let caim = cmd_solve(&cfg, snaps.path(), a.path(), Method::Caim, true).unwrap();
    let aim = cmd_solve(&cfg, snaps.path(), b.path(), Method::Aim, false).unwrap();
    for (c, a) in caim.aps.iter().zip(&aim.aps) {
        assert_eq!(c.estimate.detected_bins, a.estimate.detected_bins);
        assert_eq!(c.estimate.los_bin, a.estimate.los_bin);
    }
}

#[test]
fn verify_brute_force_passes_on_small_problem() {
    let cfg = tiny_config();
    let snaps = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    cmd_simulate(&cfg, snaps.path()).unwrap();
    let report = cmd_solve(&cfg, snaps.path(), out.path(), Method::Caim, true).unwrap();
    let opt = report.brute_force_energy.unwrap();
    assert!((report.best_energy.unwrap() - opt).abs() <= 1e-9 * opt.abs().max(1.0));
    for ap in &report.aps {
        assert_eq!(ap.los_error_deg, 0.0);
    }
}

#[test]
fn verify_brute_force_rejects_large_problem() {
    let cfg = small_config();
    let snaps = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    cmd_simulate(&cfg, snaps.path()).unwrap();
    assert!(cmd_solve(&cfg, snaps.path(), out.path(), Method::Caim, true).is_err());
}

#[test]
fn qubo_export_roundtrips_bit_exactly() {
    let cfg = small_config();
    let snaps = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    cmd_simulate(&cfg, snaps.path()).unwrap();
    let path = out.path().join("q.txt");
    let problem = cmd_build_qubo(&cfg, snaps.path(), &path).unwrap();
    let text = fs::read(&path).unwrap();
    let back = QuboProblem::read_text(text.as_slice()).unwrap();
    assert_eq!(back, problem);
    let mut again = Vec::new();
    back.write_text(&mut again).unwrap();
    assert_eq!(again, text);
}

#[test]
fn evaluate_smoke_single_trial() {
    let mut cfg = small_config();
    cfg.experiment.trials = 1;
    cfg.experiment.sweep_aps = Some(vec![2, 3]);
    let out = tempfile::tempdir().unwrap();
    let report = cmd_evaluate(&cfg, out.path()).unwrap();
    assert_eq!(report.trials, 1);
    for m in ["caim", "aim", "l1"] {
        for k in 1..=3 {
            assert!(out.path().join(format!("ecdf_{m}_ap{k}.csv")).exists());
        }
    }
    let sweep = fs::read_to_string(out.path().join("sweep_p.csv")).unwrap();
    let header = sweep.lines().next().unwrap();
    assert_eq!(
        header,
        "num_aps,method,average_error_deg,ap1_mean_error_deg,ap1_std_error_deg,average_median_deg,trials"
    );
    assert_eq!(sweep.lines().count(), 1 + 2 * 3);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.path().join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["schema"], "caim-report/1");
    assert_eq!(summary["spec"]["trials"], 1);
    assert!(summary["note"]
        .as_str()
        .unwrap()
        .contains("RoArray-like (simplified)"));
}

#[test]
fn sweep_writes_one_row_per_point_and_method() {
    let mut cfg = small_config();
    cfg.sweep.gammas = vec![1.0];
    cfg.sweep.mus = vec![0.0, 1.0];
    cfg.sweep.trials = 1;
    cfg.experiment.methods = vec![Method::Caim];
    let out = tempfile::tempdir().unwrap();
    let points = cmd_sweep(&cfg, out.path()).unwrap();
    assert_eq!(points.len(), 2);
    let csv = fs::read_to_string(out.path().join("parameter_sweep.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "gamma,mu,method,average_median_deg,average_mean_deg,trials"
    );
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn binary_reports_validation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("bad.toml");
    fs::write(&cfg_path, "[ising]\ngamma = -1.0\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_caim"))
        .arg("--config")
        .arg(&cfg_path)
        .arg("simulate")
        .arg("--out")
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("gamma"), "{stderr}");
}

#[test]
fn binary_print_config_reloads() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_caim"))
        .args(["--print-config", "--seed", "9", "simulate", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    let toml_part = stdout.split("wrote ").next().unwrap();
    let cfg = RunConfig::from_toml(toml_part).unwrap();
    assert_eq!(cfg.experiment.seed, 9);
    assert_eq!(cfg.ising.anneal.seed, 9);
}

#[test]
fn binary_solve_missing_input_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_caim"))
        .args(["solve", "--input"])
        .arg(dir.path().join("nothing"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("snapshot_ap1.json"));
}
