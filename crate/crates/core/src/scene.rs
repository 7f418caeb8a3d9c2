//! Synthetic multipath scenes and single-snapshot received signals.
//!
//! Each access point sees the far-field source along its line of sight at
//! local angle `θ_p = wrap(β − φ_p)` plus `num_paths − 1` reflections. The
//! LoS gain has unit magnitude and uniform phase. Reflection `c` (1-based)
//! carries a circular complex Gaussian gain of power `ρ^c`, at an angle drawn
//! uniformly over the grid. Noise is i.i.d. circular complex Gaussian with
//! per-element variance `σ² = 1 / 10^(snr_db/10)`, i.e. SNR is referenced to
//! the LoS amplitude.

use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::array_model::{
    aligned_index, rotation_shift, steering_vector, ArrayGeometry, SteeringGrid,
};
use crate::error::{invalid, Error, Result};

/// Angles within this fraction of a bin of a grid angle count as on-grid.
const ON_GRID_TOL_BINS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApConfig {
    pub orientation_deg: f64,
    /// LoS plus reflections; path 0 is the LoS.
    pub num_paths: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub aps: Vec<ApConfig>,
    pub source_bearing_deg: f64,
    /// `f64::INFINITY` disables noise.
    pub snr_db: f64,
    pub seed: u64,
    pub on_grid: bool,
    /// Power ratio between consecutive reflections (and LoS to first reflection).
    pub reflection_decay: f64,
}

impl Scene {
    /// Scene with identical path counts at every AP and the default decay of 0.5.
    pub fn new(
        orientations_deg: &[f64],
        num_paths: usize,
        source_bearing_deg: f64,
        snr_db: f64,
        seed: u64,
        on_grid: bool,
    ) -> Self {
        Self {
            aps: orientations_deg
                .iter()
                .map(|&orientation_deg| ApConfig {
                    orientation_deg,
                    num_paths,
                })
                .collect(),
            source_bearing_deg,
            snr_db,
            seed,
            on_grid,
            reflection_decay: 0.5,
        }
    }

    pub fn orientations(&self) -> Vec<f64> {
        self.aps.iter().map(|a| a.orientation_deg).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.aps.is_empty() {
            return Err(invalid("scene needs at least one access point"));
        }
        if let Some(ap) = self.aps.iter().find(|a| a.num_paths == 0) {
            return Err(invalid(format!(
                "AP at orientation {}° has zero paths",
                ap.orientation_deg
            )));
        }
        if !self.source_bearing_deg.is_finite()
            || self.aps.iter().any(|a| !a.orientation_deg.is_finite())
        {
            return Err(invalid("scene angles must be finite"));
        }
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return Err(invalid(format!("invalid SNR {} dB", self.snr_db)));
        }
        if !(self.reflection_decay > 0.0 && self.reflection_decay.is_finite()) {
            return Err(invalid(format!(
                "reflection decay must be positive, got {}",
                self.reflection_decay
            )));
        }
        Ok(())
    }

    /// Per-element noise variance.
    pub fn noise_variance(&self) -> f64 {
        if self.snr_db == f64::INFINITY {
            0.0
        } else {
            10f64.powf(-self.snr_db / 10.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathTruth {
    pub angle_deg: f64,
    pub gain: Complex64,
}

/// One AP's received vector and its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApSnapshot {
    pub orientation_deg: f64,
    pub received: Vec<Complex64>,
    /// LoS first.
    pub truth: Vec<PathTruth>,
    /// Grid bin of the LoS; only set for on-grid scenes.
    pub los_bin: Option<usize>,
}

impl ApSnapshot {
    pub fn los_angle_deg(&self) -> f64 {
        self.truth[0].angle_deg
    }
}

/// Generates one snapshot per AP. Deterministic in `(scene, grid)`.
pub fn synthesize(scene: &Scene, grid: &SteeringGrid) -> Result<Vec<ApSnapshot>> {
    scene.validate()?;
    let geometry = *grid.geometry();
    let resolution = grid.resolution();
    let sigma2 = scene.noise_variance();
    let noise = Normal::new(0.0, (sigma2 / 2.0).sqrt()).expect("finite noise scale");
    let unit = Normal::new(0.0, std::f64::consts::FRAC_1_SQRT_2).expect("finite scale");

    let mut out = Vec::with_capacity(scene.aps.len());
    for (p, ap) in scene.aps.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
        rng.set_stream(p as u64);

        let mut los_angle = grid.wrap_angle(scene.source_bearing_deg - ap.orientation_deg);
        let los_on_grid = grid.is_on_grid(los_angle, ON_GRID_TOL_BINS);
        if scene.on_grid && !los_on_grid {
            return Err(invalid(format!(
                "on-grid scene but LoS angle {los_angle}° of AP {p} is not a grid angle"
            )));
        }
        if scene.on_grid {
            los_angle = grid.angle(grid.bin_of(los_angle));
        } else if los_on_grid {
            los_angle = grid.wrap_angle(los_angle + rng.random_range(-0.5..0.5) * resolution);
        }
        let los_gain = Complex64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU));

        let mut truth = Vec::with_capacity(ap.num_paths);
        truth.push(PathTruth {
            angle_deg: los_angle,
            gain: los_gain,
        });
        for c in 1..ap.num_paths {
            let bin = rng.random_range(0..grid.num_bins());
            let mut angle = grid.angle(bin);
            if !scene.on_grid {
                angle = grid.wrap_angle(angle + rng.random_range(-0.5..0.5) * resolution);
            }
            let amplitude = scene.reflection_decay.powi(c as i32).sqrt();
            let gain = Complex64::new(unit.sample(&mut rng), unit.sample(&mut rng)) * amplitude;
            truth.push(PathTruth {
                angle_deg: angle,
                gain,
            });
        }

        let mut received = vec![Complex64::new(0.0, 0.0); geometry.num_elements];
        for path in &truth {
            let a = if scene.on_grid {
                grid.column(grid.bin_of(path.angle_deg)).to_vec()
            } else {
                steering_vector(&geometry, path.angle_deg)
            };
            for (r, ai) in received.iter_mut().zip(&a) {
                *r += ai * path.gain;
            }
        }
        if sigma2 > 0.0 {
            for r in received.iter_mut() {
                *r += Complex64::new(noise.sample(&mut rng), noise.sample(&mut rng));
            }
        }

        out.push(ApSnapshot {
            orientation_deg: ap.orientation_deg,
            received,
            truth,
            los_bin: scene.on_grid.then(|| grid.bin_of(los_angle)),
        });
    }
    Ok(out)
}

/// LoS bins of one AP pair and whether they satisfy the rotation alignment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairAlignment {
    pub p: usize,
    pub q: usize,
    pub los_bin_p: usize,
    pub los_bin_q: usize,
    pub shift_bins: usize,
    pub aligned: bool,
}

/// For every pair `p < q`, checks `aligned_index(los_q, shift(φ_p − φ_q)) == los_p`.
pub fn ground_truth_alignment(
    snapshots: &[ApSnapshot],
    grid: &SteeringGrid,
) -> Result<Vec<PairAlignment>> {
    let bins = snapshots
        .iter()
        .map(|s| s.los_bin)
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| {
            Error::Unavailable("ground-truth alignment needs an on-grid scene".into())
        })?;
    let mut out = Vec::new();
    for p in 0..snapshots.len() {
        for q in p + 1..snapshots.len() {
            let shift = rotation_shift(
                snapshots[p].orientation_deg - snapshots[q].orientation_deg,
                grid,
            );
            out.push(PairAlignment {
                p,
                q,
                los_bin_p: bins[p],
                los_bin_q: bins[q],
                shift_bins: shift.bins,
                aligned: aligned_index(bins[q], &shift)? == bins[p],
            });
        }
    }
    Ok(out)
}

pub const SNAPSHOT_FORMAT: &str = "caim-snapshot/1";

/// Self-contained on-disk record of one AP snapshot.
///
/// Complex values serialize as `[re, im]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub format: String,
    pub ap: usize,
    pub geometry: ArrayGeometry,
    pub num_bins: usize,
    pub theta_min: f64,
    pub theta_max: f64,
    pub snr_db: Option<f64>,
    pub source_bearing_deg: f64,
    pub on_grid: bool,
    pub snapshot: ApSnapshot,
}

impl SnapshotRecord {
    pub fn new(ap: usize, scene: &Scene, grid: &SteeringGrid, snapshot: ApSnapshot) -> Self {
        Self {
            format: SNAPSHOT_FORMAT.to_string(),
            ap,
            geometry: *grid.geometry(),
            num_bins: grid.num_bins(),
            theta_min: grid.theta_min(),
            theta_max: grid.theta_max(),
            // JSON has no infinity.
            snr_db: scene.snr_db.is_finite().then_some(scene.snr_db),
            source_bearing_deg: scene.source_bearing_deg,
            on_grid: scene.on_grid,
            snapshot,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let rec: SnapshotRecord = serde_json::from_str(&text)?;
        if rec.format != SNAPSHOT_FORMAT {
            return Err(invalid(format!(
                "{}: unsupported snapshot format {:?}",
                path.display(),
                rec.format
            )));
        }
        Ok(rec)
    }
}
