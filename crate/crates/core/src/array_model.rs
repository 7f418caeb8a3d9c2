//! Uniform linear array model: steering vectors, the overcomplete manifold
//! on a circular angular grid, and the rotation-to-shift index algebra used
//! to align supports across access points.
//!
//! Angles are in degrees everywhere outside trig evaluation. The grid covers
//! `[theta_min, theta_max)` with `num_bins` equally spaced bins and is treated
//! as circular: shifts and angle-to-bin mapping wrap modulo the span.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// ULA geometry: element count and spacing in wavelengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub num_elements: usize,
    pub spacing_over_wavelength: f64,
}

impl ArrayGeometry {
    pub fn new(num_elements: usize, spacing_over_wavelength: f64) -> Result<Self> {
        if num_elements < 2 {
            return Err(invalid(format!(
                "array needs at least 2 elements, got {num_elements}"
            )));
        }
        if !(spacing_over_wavelength > 0.0 && spacing_over_wavelength.is_finite()) {
            return Err(invalid(format!(
                "element spacing must be positive, got {spacing_over_wavelength}"
            )));
        }
        Ok(Self {
            num_elements,
            spacing_over_wavelength,
        })
    }
}

impl Default for ArrayGeometry {
    fn default() -> Self {
        Self {
            num_elements: 8,
            spacing_over_wavelength: 0.5,
        }
    }
}

/// Response of the array to a plane wave from `theta_deg` off broadside.
///
/// Element `m` is `exp(-j 2π (d/λ) m sin θ)`.
pub fn steering_vector(geometry: &ArrayGeometry, theta_deg: f64) -> Vec<Complex64> {
    let phase_step = -2.0 * PI * geometry.spacing_over_wavelength * theta_deg.to_radians().sin();
    (0..geometry.num_elements)
        .map(|m| Complex64::from_polar(1.0, phase_step * m as f64))
        .collect()
}

/// Angular grid plus its overcomplete manifold matrix.
///
/// The manifold is stored column-major so that the steering vector of bin
/// `k` is a contiguous slice. The real part of the Gram matrix `Ψ^H Ψ` is
/// computed once at construction since every QUBO built on this grid needs it.
#[derive(Debug, Clone)]
pub struct SteeringGrid {
    geometry: ArrayGeometry,
    num_bins: usize,
    theta_min: f64,
    theta_max: f64,
    manifold: Arc<[Complex64]>,
    gram_real: Arc<[f64]>,
}

/// Builds the grid `θ_k = theta_min + k·Δ`, `Δ = (theta_max − theta_min)/num_bins`.
pub fn build_grid(
    geometry: ArrayGeometry,
    num_bins: usize,
    theta_min: f64,
    theta_max: f64,
) -> Result<SteeringGrid> {
    // Re-validate: the fields are public.
    let geometry = ArrayGeometry::new(geometry.num_elements, geometry.spacing_over_wavelength)?;
    if num_bins < 2 {
        return Err(invalid(format!(
            "grid needs at least 2 bins, got {num_bins}"
        )));
    }
    if !(theta_min.is_finite() && theta_max.is_finite() && theta_min < theta_max) {
        return Err(invalid(format!(
            "grid bounds must satisfy theta_min < theta_max, got [{theta_min}, {theta_max})"
        )));
    }
    let resolution = (theta_max - theta_min) / num_bins as f64;
    let m = geometry.num_elements;

    let mut manifold = Vec::with_capacity(m * num_bins);
    for k in 0..num_bins {
        manifold.extend(steering_vector(
            &geometry,
            theta_min + k as f64 * resolution,
        ));
    }

    let mut gram_real = vec![0.0; num_bins * num_bins];
    for h in 0..num_bins {
        let col_h = &manifold[h * m..(h + 1) * m];
        for g in h..num_bins {
            let col_g = &manifold[g * m..(g + 1) * m];
            let re: f64 = col_h
                .iter()
                .zip(col_g)
                .map(|(a, b)| (a.conj() * b).re)
                .sum();
            gram_real[h * num_bins + g] = re;
            gram_real[g * num_bins + h] = re;
        }
    }

    Ok(SteeringGrid {
        geometry,
        num_bins,
        theta_min,
        theta_max,
        manifold: manifold.into(),
        gram_real: gram_real.into(),
    })
}

impl SteeringGrid {
    pub fn geometry(&self) -> &ArrayGeometry {
        &self.geometry
    }

    pub fn num_elements(&self) -> usize {
        self.geometry.num_elements
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn theta_min(&self) -> f64 {
        self.theta_min
    }

    pub fn theta_max(&self) -> f64 {
        self.theta_max
    }

    /// Grid span in degrees (`theta_max − theta_min`).
    pub fn span(&self) -> f64 {
        self.theta_max - self.theta_min
    }

    /// Bin spacing Δ in degrees.
    pub fn resolution(&self) -> f64 {
        self.span() / self.num_bins as f64
    }

    pub fn angle(&self, bin: usize) -> f64 {
        self.theta_min + bin as f64 * self.resolution()
    }

    /// Steering vector of bin `k` (column `k` of Ψ).
    pub fn column(&self, bin: usize) -> &[Complex64] {
        let m = self.num_elements();
        &self.manifold[bin * m..(bin + 1) * m]
    }

    /// `Re{(Ψ^H Ψ)[h, g]}`.
    pub fn gram_real(&self, h: usize, g: usize) -> f64 {
        self.gram_real[h * self.num_bins + g]
    }

    /// Row-major `N_r × N_r` view of `Re{Ψ^H Ψ}`.
    pub fn gram_real_matrix(&self) -> &[f64] {
        &self.gram_real
    }

    /// Maps an angle into `[theta_min, theta_max)` modulo the span.
    pub fn wrap_angle(&self, theta_deg: f64) -> f64 {
        let wrapped = self.theta_min + (theta_deg - self.theta_min).rem_euclid(self.span());
        // rem_euclid may round up to exactly the span for tiny negative inputs.
        if wrapped >= self.theta_max {
            self.theta_min
        } else {
            wrapped
        }
    }

    /// Nearest bin of an arbitrary angle, with circular wrap.
    pub fn bin_of(&self, theta_deg: f64) -> usize {
        let offset = (self.wrap_angle(theta_deg) - self.theta_min) / self.resolution();
        (offset.round() as i64).rem_euclid(self.num_bins as i64) as usize
    }

    /// Whether `theta_deg` coincides with a grid angle up to `tol_bins` bins.
    pub fn is_on_grid(&self, theta_deg: f64, tol_bins: f64) -> bool {
        let offset = (self.wrap_angle(theta_deg) - self.theta_min) / self.resolution();
        (offset - offset.round()).abs() <= tol_bins
    }

    /// Smallest absolute angular difference on the circular grid span.
    pub fn circular_distance(&self, a_deg: f64, b_deg: f64) -> f64 {
        let span = self.span();
        let d = (a_deg - b_deg).rem_euclid(span);
        d.min(span - d)
    }

    /// `Ψ^H y`.
    pub fn matched_filter(&self, y: &[Complex64]) -> Result<Vec<Complex64>> {
        check_len("snapshot", self.num_elements(), y.len())?;
        Ok((0..self.num_bins)
            .map(|k| {
                self.column(k)
                    .iter()
                    .zip(y)
                    .map(|(a, v)| a.conj() * v)
                    .sum()
            })
            .collect())
    }

    /// `Ψ s` for a length-`N_r` coefficient vector.
    pub fn synthesize(&self, coefficients: &[Complex64]) -> Result<Vec<Complex64>> {
        check_len("coefficients", self.num_bins, coefficients.len())?;
        let mut out = vec![Complex64::new(0.0, 0.0); self.num_elements()];
        for (k, s) in coefficients.iter().enumerate() {
            if *s == Complex64::new(0.0, 0.0) {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.column(k)) {
                *o += a * s;
            }
        }
        Ok(out)
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            actual,
        })
    }
}

/// Orientation difference `α = φ_p − φ_q` expressed as a circular bin shift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationShift {
    pub angle_deg: f64,
    pub bins: usize,
    pub num_bins: usize,
}

/// `bins = round(α/Δ) mod N_r`, rounding half away from zero.
pub fn rotation_shift(alpha_deg: f64, grid: &SteeringGrid) -> RotationShift {
    let n = grid.num_bins as i64;
    let steps = (alpha_deg / grid.resolution()).round() as i64;
    RotationShift {
        angle_deg: alpha_deg,
        bins: steps.rem_euclid(n) as usize,
        num_bins: grid.num_bins,
    }
}

impl RotationShift {
    /// Shift for `−α`.
    pub fn inverse(&self) -> RotationShift {
        RotationShift {
            angle_deg: -self.angle_deg,
            bins: (self.num_bins - self.bins) % self.num_bins,
            num_bins: self.num_bins,
        }
    }
}

/// Bin `h` of AP `p` aligned with bin `q_bin` of AP `q`, where `shift` is
/// the rotation `α_(p,q) = φ_p − φ_q`: `q_bin = (h + shift.bins) mod N_r`.
pub fn aligned_index(q_bin: usize, shift: &RotationShift) -> Result<usize> {
    let n = shift.num_bins;
    if q_bin >= n {
        return Err(Error::OutOfRange {
            index: q_bin,
            bound: n,
        });
    }
    Ok((q_bin + n - shift.bins) % n)
}

/// Inverse of [`aligned_index`]: the bin of AP `q` aligned with bin `h` of AP `p`.
pub fn partner_index(h: usize, shift: &RotationShift) -> Result<usize> {
    let n = shift.num_bins;
    if h >= n {
        return Err(Error::OutOfRange { index: h, bound: n });
    }
    Ok((h + shift.bins) % n)
}
