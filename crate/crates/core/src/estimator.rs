//! Turning solver output into per-AP angle estimates, plus the two baselines.
//!
//! * CAIM: one cooperative QUBO over all APs, annealed jointly, decoded with
//!   cross-AP alignment votes to pick the LoS bin.
//! * AIM: the same reduction with `μ = 0`, solved independently per AP.
//! * ℓ1 ("RoArray-like, simplified"): per-AP complex LASSO by proximal
//!   gradient, without RoArray's cross-AP MMSE fusion step.
//!
//! The binary reduction fixes every path amplitude to `1 + 0j`, so before
//! building a QUBO each snapshot is optionally de-rotated by the phase of its
//! strongest matched-filter bin (`phase_align`). That leaves angles untouched
//! and makes `Re{Ψ^H y}` positive at the dominant path.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::array_model::SteeringGrid;
use crate::error::{invalid, Result};
use crate::linalg::{norm_sqr, refit_amplitudes};
use crate::qubo::{build_qubo, BinaryState, QuboProblem};
use crate::scene::ApSnapshot;
use crate::solver::{anneal, AnnealConfig, SolveResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApEstimate {
    pub detected_bins: Vec<usize>,
    pub detected_angles_deg: Vec<f64>,
    pub los_bin: Option<usize>,
    pub los_angle_deg: Option<f64>,
    /// One entry per detected bin.
    pub alignment_votes: Vec<usize>,
    /// One entry per detected bin; serialized as `[re, im]`.
    pub refit_amplitudes: Vec<Complex64>,
    /// False when the underlying iterative solve hit its iteration cap.
    pub converged: bool,
}

impl ApEstimate {
    pub fn is_empty(&self) -> bool {
        self.detected_bins.is_empty()
    }

    fn empty() -> Self {
        Self {
            detected_bins: vec![],
            detected_angles_deg: vec![],
            los_bin: None,
            los_angle_deg: None,
            alignment_votes: vec![],
            refit_amplitudes: vec![],
            converged: true,
        }
    }
}

/// Picks the LoS among `bins`: most votes, then largest `|amplitude|`, then lowest bin.
fn select_los(bins: &[usize], votes: &[usize], amplitudes: &[Complex64]) -> Option<usize> {
    (0..bins.len())
        .max_by(|&a, &b| {
            votes[a]
                .cmp(&votes[b])
                .then(amplitudes[a].norm().total_cmp(&amplitudes[b].norm()))
                .then(bins[b].cmp(&bins[a]))
        })
        .map(|k| bins[k])
}

fn assemble(
    grid: &SteeringGrid,
    bins: Vec<usize>,
    votes: Vec<usize>,
    amplitudes: Vec<Complex64>,
    converged: bool,
) -> ApEstimate {
    if bins.is_empty() {
        return ApEstimate {
            converged,
            ..ApEstimate::empty()
        };
    }
    let los_bin = select_los(&bins, &votes, &amplitudes);
    ApEstimate {
        detected_angles_deg: bins.iter().map(|&b| grid.angle(b)).collect(),
        los_angle_deg: los_bin.map(|b| grid.angle(b)),
        los_bin,
        detected_bins: bins,
        alignment_votes: votes,
        refit_amplitudes: amplitudes,
        converged,
    }
}

/// Decodes a cooperative solution into one estimate per AP.
///
/// A detected bin of AP `p` gets one vote from every other AP whose support
/// contains the bin aligned with it under their relative rotation.
pub fn decode_caim(
    solution: &BinaryState,
    problem: &QuboProblem,
    snapshots: &[ApSnapshot],
    grid: &SteeringGrid,
) -> Result<Vec<ApEstimate>> {
    let map = *problem.index_map();
    crate::array_model::check_len("solution", problem.num_vars(), solution.len())?;
    crate::array_model::check_len("snapshots per AP block", map.num_aps, snapshots.len())?;
    crate::array_model::check_len("grid bins", map.num_bins, grid.num_bins())?;

    let mut out = Vec::with_capacity(map.num_aps);
    for (p, snap) in snapshots.iter().enumerate() {
        let bins = solution.ones_in_block(&map, p);
        let votes: Vec<usize> = bins
            .iter()
            .map(|&h| {
                problem
                    .partners(map.flat(p, h))
                    .iter()
                    .filter(|&&j| solution.bits[j])
                    .count()
            })
            .collect();
        let amplitudes = refit_amplitudes(grid, &bins, &snap.received);
        out.push(assemble(grid, bins, votes, amplitudes, true));
    }
    Ok(out)
}

/// Rotates `y` so the strongest matched-filter coefficient is real and positive.
pub fn phase_align(y: &[Complex64], grid: &SteeringGrid) -> Result<Vec<Complex64>> {
    let mf = grid.matched_filter(y)?;
    let peak = mf
        .iter()
        .copied()
        .max_by(|a, b| a.norm_sqr().total_cmp(&b.norm_sqr()))
        .unwrap_or_default();
    if peak.norm() == 0.0 {
        return Ok(y.to_vec());
    }
    let rot = peak.conj() / peak.norm();
    Ok(y.iter().map(|v| v * rot).collect())
}

fn prepare(snapshots: &[ApSnapshot], grid: &SteeringGrid, align: bool) -> Result<Vec<ApSnapshot>> {
    snapshots
        .iter()
        .map(|s| {
            let mut s = s.clone();
            if align {
                s.received = phase_align(&s.received, grid)?;
            }
            Ok(s)
        })
        .collect()
}

/// Settings shared by the two Ising-based estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IsingConfig {
    pub gamma: f64,
    pub mu: f64,
    pub phase_align: bool,
    pub anneal: AnnealConfig,
}

impl Default for IsingConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            mu: 1.0,
            phase_align: true,
            anneal: AnnealConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CaimOutput {
    pub estimates: Vec<ApEstimate>,
    pub problem: QuboProblem,
    pub solve: SolveResult,
}

/// The joint QUBO that [`estimate_caim`] anneals, together with the
/// (phase-aligned) snapshots it was built from.
pub fn build_caim_qubo(
    snapshots: &[ApSnapshot],
    grid: &SteeringGrid,
    config: &IsingConfig,
) -> Result<(QuboProblem, Vec<ApSnapshot>)> {
    let prepared = prepare(snapshots, grid, config.phase_align)?;
    let orientations: Vec<f64> = snapshots.iter().map(|s| s.orientation_deg).collect();
    let problem = build_qubo(&prepared, grid, &orientations, config.gamma, config.mu)?;
    Ok((problem, prepared))
}

/// Cooperative estimate: joint QUBO over all APs, annealed once, vote-decoded.
pub fn estimate_caim(
    snapshots: &[ApSnapshot],
    grid: &SteeringGrid,
    config: &IsingConfig,
) -> Result<CaimOutput> {
    let (problem, prepared) = build_caim_qubo(snapshots, grid, config)?;
    let solve = anneal(&problem, &config.anneal)?;
    let estimates = decode_caim(&solve.best_state, &problem, &prepared, grid)?;
    Ok(CaimOutput {
        estimates,
        problem,
        solve,
    })
}

/// Independent per-AP Ising estimate (`μ = 0`, one QUBO of size `N_r` per AP).
///
/// AP `p` anneals with seed `anneal.seed + p`, so a single-AP call matches
/// [`estimate_caim`] with `μ = 0` exactly.
pub fn estimate_aim(
    snapshots: &[ApSnapshot],
    grid: &SteeringGrid,
    config: &IsingConfig,
) -> Result<Vec<ApEstimate>> {
    let prepared = prepare(snapshots, grid, config.phase_align)?;
    let mut out = Vec::with_capacity(prepared.len());
    for (p, snap) in prepared.iter().enumerate() {
        let single = std::slice::from_ref(snap);
        let problem = build_qubo(single, grid, &[snap.orientation_deg], config.gamma, 0.0)?;
        let anneal_cfg = AnnealConfig {
            seed: config.anneal.seed.wrapping_add(p as u64),
            ..config.anneal.clone()
        };
        let solve = anneal(&problem, &anneal_cfg)?;
        out.extend(decode_caim(&solve.best_state, &problem, single, grid)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct L1Config {
    pub lambda: f64,
    pub max_iters: usize,
    pub tol: f64,
    /// Support keeps bins with `|s| > support_threshold · max |s|`.
    pub support_threshold: f64,
}

impl Default for L1Config {
    fn default() -> Self {
        Self {
            lambda: 2.0,
            max_iters: 3000,
            tol: 1e-7,
            support_threshold: 0.01,
        }
    }
}

impl L1Config {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(invalid(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if self.max_iters == 0 {
            return Err(invalid("max_iters must be positive"));
        }
        if !(self.tol > 0.0) {
            return Err(invalid("tol must be positive"));
        }
        if !(0.0..1.0).contains(&self.support_threshold) {
            return Err(invalid("support_threshold must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoSolution {
    pub coefficients: Vec<Complex64>,
    /// Objective before the first iteration and after every iteration.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Largest eigenvalue of `Ψ^H Ψ` (equivalently of the `M × M` matrix `Ψ Ψ^H`)
/// by power iteration.
pub fn lipschitz_constant(grid: &SteeringGrid) -> f64 {
    let m = grid.num_elements();
    let n = grid.num_bins();
    // ΨΨ^H, Hermitian M×M.
    let mut a = vec![Complex64::new(0.0, 0.0); m * m];
    for k in 0..n {
        let col = grid.column(k);
        for r in 0..m {
            for c in 0..m {
                a[r * m + c] += col[r] * col[c].conj();
            }
        }
    }
    let mut v: Vec<Complex64> = (0..m)
        .map(|i| Complex64::new(1.0, 0.1 * i as f64))
        .collect();
    let mut lambda = 0.0;
    for _ in 0..1000 {
        let w: Vec<Complex64> = (0..m)
            .map(|r| (0..m).map(|c| a[r * m + c] * v[c]).sum())
            .collect();
        let norm = norm_sqr(&w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let next = norm / norm_sqr(&v).sqrt();
        v = w.iter().map(|x| x / norm).collect();
        if (next - lambda).abs() <= 1e-14 * next {
            lambda = next;
            break;
        }
        lambda = next;
    }
    lambda
}

fn lasso_objective(grid: &SteeringGrid, y: &[Complex64], s: &[Complex64], lambda: f64) -> f64 {
    let model = grid.synthesize(s).expect("sized");
    let fit: f64 = y.iter().zip(&model).map(|(a, b)| (a - b).norm_sqr()).sum();
    0.5 * fit + lambda * s.iter().map(|c| c.norm()).sum::<f64>()
}

/// `min_s ½‖y − Ψs‖² + λ‖s‖₁` over complex `s` by ISTA with step `1/L`.
pub fn lasso_ista(
    grid: &SteeringGrid,
    y: &[Complex64],
    config: &L1Config,
) -> Result<LassoSolution> {
    config.validate()?;
    let n = grid.num_bins();
    let correlation = grid.matched_filter(y)?;
    let mut s = vec![Complex64::new(0.0, 0.0); n];
    let mut trace = vec![lasso_objective(grid, y, &s, config.lambda)];

    let max_corr = correlation.iter().map(|c| c.norm()).fold(0.0, f64::max);
    if config.lambda >= max_corr {
        // Zero satisfies the optimality conditions.
        return Ok(LassoSolution {
            coefficients: s,
            objective_trace: trace,
            iterations: 0,
            converged: true,
        });
    }

    // Small margin so the power-iteration estimate cannot undershoot L.
    let lipschitz = lipschitz_constant(grid) * (1.0 + 1e-9);
    let step = 1.0 / lipschitz;
    let threshold = config.lambda * step;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iters {
        iterations += 1;
        let residual: Vec<Complex64> = grid
            .synthesize(&s)?
            .iter()
            .zip(y)
            .map(|(m, v)| m - v)
            .collect();
        let grad = grid.matched_filter(&residual)?;
        let mut max_change: f64 = 0.0;
        let mut max_mag: f64 = 0.0;
        for (sk, gk) in s.iter_mut().zip(&grad) {
            let z = *sk - gk * step;
            let mag = z.norm();
            let next = if mag <= threshold {
                Complex64::new(0.0, 0.0)
            } else {
                z * ((mag - threshold) / mag)
            };
            max_change = max_change.max((next - *sk).norm());
            max_mag = max_mag.max(next.norm());
            *sk = next;
        }
        trace.push(lasso_objective(grid, y, &s, config.lambda));
        if max_change <= config.tol * max_mag.max(1.0) {
            converged = true;
            break;
        }
    }
    Ok(LassoSolution {
        coefficients: s,
        objective_trace: trace,
        iterations,
        converged,
    })
}

/// Per-AP ℓ1 baseline. Detected bins are those above the relative support
/// threshold; amplitudes are the LASSO coefficients themselves and the LoS is
/// the largest one.
pub fn estimate_l1(
    snapshots: &[ApSnapshot],
    grid: &SteeringGrid,
    config: &L1Config,
) -> Result<Vec<ApEstimate>> {
    config.validate()?;
    snapshots
        .iter()
        .map(|snap| {
            let sol = lasso_ista(grid, &snap.received, config)?;
            let peak = sol
                .coefficients
                .iter()
                .map(|c| c.norm())
                .fold(0.0, f64::max);
            let bins: Vec<usize> = if peak == 0.0 {
                vec![]
            } else {
                (0..grid.num_bins())
                    .filter(|&k| sol.coefficients[k].norm() > config.support_threshold * peak)
                    .collect()
            };
            let amplitudes: Vec<Complex64> = bins.iter().map(|&k| sol.coefficients[k]).collect();
            let votes = vec![0; bins.len()];
            Ok(assemble(grid, bins, votes, amplitudes, sol.converged))
        })
        .collect()
}
