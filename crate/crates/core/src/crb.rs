//! Delay Fisher information, Cramér-Rao bound and the effective-bandwidth
//! sensing requirement.
//!
//! The CRB of each path delay is inversely proportional to the squared
//! effective bandwidth `W = Σ Pm um m² − (Σ Pm um m)² / Σ Pm um`, i.e. the
//! power-weighted variance of the sensing subcarrier indices. The sensing
//! constraint is checked on `W` directly, which costs O(M) per check.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{IsacError, Result};
use crate::model::{subcarrier_index, Path, PathSet, SystemConfig};

/// 3×3 FIM in parameter order `(τ, Re b, Im b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fim3(pub [[f64; 3]; 3]);

impl Fim3 {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[i][j]
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..3).all(|i| (0..3).all(|j| (self.0[i][j] - self.0[j][i]).abs() <= tol))
    }
}

/// Per-path thresholds on the squared effective bandwidth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensingRequirement {
    pub per_path: Vec<f64>,
    pub binding: f64,
}

impl SensingRequirement {
    pub fn is_met(&self, effective_bandwidth: f64) -> bool {
        effective_bandwidth >= self.binding
    }
}

/// Power-weighted index variance of the sensing subcarriers.
///
/// `assignment` may be fractional; 0 is returned when no sensing power exists.
pub fn squared_effective_bandwidth(power: &[f64], assignment: &[f64]) -> f64 {
    debug_assert_eq!(power.len(), assignment.len());
    let (mut s0, mut s1) = (0.0, 0.0);
    for (i, (&p, &u)) in power.iter().zip(assignment).enumerate() {
        let w = p * u;
        s0 += w;
        s1 += w * subcarrier_index(i);
    }
    if s0 <= 0.0 {
        return 0.0;
    }
    // second pass around the centroid avoids cancellation in Σw m² − (Σw m)²/Σw
    let centroid = s1 / s0;
    let var: f64 = power
        .iter()
        .zip(assignment)
        .enumerate()
        .map(|(i, (&p, &u))| {
            let d = subcarrier_index(i) - centroid;
            p * u * d * d
        })
        .sum();
    var.max(0.0)
}

/// Closed-form Fisher information of `(τ, Re b, Im b)` for one path.
pub fn fim(config: &SystemConfig, path: &Path, power: &[f64], assignment: &[f64]) -> Fim3 {
    let two_pi_df = 2.0 * PI * config.subcarrier_spacing_hz;
    let b = path.coefficient;
    let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for (i, (&p, &u)) in power.iter().zip(assignment).enumerate() {
        let w = u * p;
        let m = subcarrier_index(i);
        s0 += w;
        s1 += w * m;
        s2 += w * m * m;
    }
    let scale = 2.0 * config.num_rx_antennas as f64 / config.noise_power_w;
    let tt = scale * two_pi_df * two_pi_df * s2 * b.norm_sqr();
    let tr = scale * two_pi_df * s1 * b.im;
    let ti = -scale * two_pi_df * s1 * b.re;
    let rr = scale * s0;
    Fim3([[tt, tr, ti], [tr, rr, 0.0], [ti, 0.0, rr]])
}

/// `CRB⁻¹(τ) = 8 N_r |b|² π² Δf² W / σ²` scale factor, i.e. CRB⁻¹ per unit W.
fn crb_inverse_per_bandwidth(config: &SystemConfig, path: &Path) -> f64 {
    8.0 * config.num_rx_antennas as f64
        * path.coefficient.norm_sqr()
        * PI
        * PI
        * config.subcarrier_spacing_hz
        * config.subcarrier_spacing_hz
        / config.noise_power_w
}

/// Delay CRB (s²) for a given squared effective bandwidth.
pub fn crb_from_bandwidth(config: &SystemConfig, path: &Path, effective_bandwidth: f64) -> Result<f64> {
    if !(effective_bandwidth > 0.0) {
        return Err(IsacError::InfeasibleSensing);
    }
    Ok(1.0 / (crb_inverse_per_bandwidth(config, path) * effective_bandwidth))
}

/// Delay CRB (s²) of one path.
pub fn crb_delay(config: &SystemConfig, path: &Path, power: &[f64], assignment: &[f64]) -> Result<f64> {
    crb_from_bandwidth(config, path, squared_effective_bandwidth(power, assignment))
}

/// Per-path thresholds `J_req,p = σ² / (8 N_r |b_p|² π² Δf² J0²)`.
///
/// `crb_delay ≤ J0²` holds for every path exactly when `W ≥ binding`.
pub fn sensing_requirement(config: &SystemConfig, paths: &PathSet) -> SensingRequirement {
    let j0_sq = config.delay_error_bound_s * config.delay_error_bound_s;
    let per_path: Vec<f64> = paths
        .paths()
        .iter()
        .map(|p| 1.0 / (crb_inverse_per_bandwidth(config, p) * j0_sq))
        .collect();
    let binding = per_path.iter().copied().fold(0.0, f64::max);
    SensingRequirement { per_path, binding }
}

/// Converts a delay variance (s²) into a range standard deviation (m).
pub fn range_error(crb_s2: f64, speed_of_light: f64) -> f64 {
    speed_of_light * crb_s2.max(0.0).sqrt()
}
