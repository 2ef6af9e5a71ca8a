//! System model shared by every other module: configuration, propagation
//! paths, the sensing/communication waveform, the frequency-domain multipath
//! channel and the communication data rate (CDR).
//!
//! Subcarriers are stored 0-based but every formula uses the 1-based index
//! `m = i + 1`; [`subcarrier_index`] is the only place that shift happens.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{IsacError, Result};

pub const SPEED_OF_LIGHT: f64 = 3.0e8;

/// 1-based subcarrier index used in every phase ramp and moment sum.
#[inline]
pub fn subcarrier_index(storage_index: usize) -> f64 {
    (storage_index + 1) as f64
}

/// Global system constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub num_subcarriers: usize,
    pub subcarrier_spacing_hz: f64,
    pub num_rx_antennas: usize,
    /// Noise power per receive antenna and subcarrier (W).
    pub noise_power_w: f64,
    /// Per-subcarrier power cap P0 (W).
    pub per_subcarrier_cap_w: f64,
    /// Total transmit power budget P_req (W).
    pub total_budget_w: f64,
    /// Largest tolerable per-path delay error J0 (s).
    pub delay_error_bound_s: f64,
    /// Carrier frequency. Recorded in manifests, never used in computation.
    #[serde(default)]
    pub carrier_frequency_hz: Option<f64>,
    pub speed_of_light: f64,
}

impl SystemConfig {
    /// Checks the hard invariants. A budget above `M * P0` is legal but can
    /// never bind, so it only produces a warning.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(IsacError::InvalidConfig(msg.to_string()));
        if self.num_subcarriers < 2 {
            return bad("num_subcarriers must be at least 2");
        }
        if !(self.subcarrier_spacing_hz > 0.0 && self.subcarrier_spacing_hz.is_finite()) {
            return bad("subcarrier_spacing_hz must be positive");
        }
        if self.num_rx_antennas < 1 {
            return bad("num_rx_antennas must be at least 1");
        }
        if !(self.noise_power_w > 0.0 && self.noise_power_w.is_finite()) {
            return bad("noise_power_w must be positive");
        }
        if !(self.per_subcarrier_cap_w > 0.0 && self.per_subcarrier_cap_w.is_finite()) {
            return bad("per_subcarrier_cap_w must be positive");
        }
        if !(self.total_budget_w > 0.0 && self.total_budget_w.is_finite()) {
            return bad("total_budget_w must be positive");
        }
        if !(self.delay_error_bound_s > 0.0) {
            return bad("delay_error_bound_s must be positive");
        }
        if !(self.speed_of_light > 0.0 && self.speed_of_light.is_finite()) {
            return bad("speed_of_light must be positive");
        }
        let cap_total = self.num_subcarriers as f64 * self.per_subcarrier_cap_w;
        if self.total_budget_w > cap_total {
            log::warn!(
                "total budget {} W exceeds M*P0 = {} W; the budget constraint cannot bind",
                self.total_budget_w,
                cap_total
            );
        }
        Ok(())
    }

    /// Length of the unambiguous delay interval `[0, 1/Δf)`.
    pub fn max_unambiguous_delay_s(&self) -> f64 {
        1.0 / self.subcarrier_spacing_hz
    }

    pub fn bandwidth_hz(&self) -> f64 {
        self.num_subcarriers as f64 * self.subcarrier_spacing_hz
    }

    /// Sets J0 from a range-error bound in meters.
    pub fn with_range_error_bound(mut self, range_m: f64) -> Self {
        self.delay_error_bound_s = range_m / self.speed_of_light;
        self
    }

    pub fn with_budget(mut self, budget_w: f64) -> Self {
        self.total_budget_w = budget_w;
        self
    }
}

/// One propagation path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub coefficient: Complex64,
    pub delay_s: f64,
    pub aoa_rad: f64,
}

impl Path {
    pub fn new(coefficient: Complex64, delay_s: f64, aoa_rad: f64) -> Self {
        Self {
            coefficient,
            delay_s,
            aoa_rad,
        }
    }
}

/// Ground-truth channel paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSet {
    paths: Vec<Path>,
}

impl PathSet {
    /// Builds a path set, enforcing nonzero coefficients, delays inside the
    /// unambiguous range and a pairwise `|cos ψp − cos ψq| ≥ 2/N_r` separation.
    pub fn new(paths: Vec<Path>, config: &SystemConfig) -> Result<Self> {
        if paths.is_empty() {
            return Err(IsacError::InvalidPaths("at least one path is required".into()));
        }
        let max_delay = config.max_unambiguous_delay_s();
        for (p, path) in paths.iter().enumerate() {
            if !(path.coefficient.norm() > 0.0) {
                return Err(IsacError::InvalidPaths(format!("path {p}: |b| must be positive")));
            }
            if !(path.delay_s >= 0.0 && path.delay_s < max_delay) {
                return Err(IsacError::InvalidPaths(format!(
                    "path {p}: delay {} s outside [0, {max_delay})",
                    path.delay_s
                )));
            }
            if !(path.aoa_rad > 0.0 && path.aoa_rad < PI) {
                return Err(IsacError::InvalidPaths(format!(
                    "path {p}: AoA {} rad outside (0, pi)",
                    path.aoa_rad
                )));
            }
        }
        let min_sep = 2.0 / config.num_rx_antennas as f64;
        for p in 0..paths.len() {
            for q in (p + 1)..paths.len() {
                let sep = (paths[p].aoa_rad.cos() - paths[q].aoa_rad.cos()).abs();
                // small slack: generated AoAs sit exactly on the 2/N_r lattice
                if sep < min_sep * (1.0 - 1e-9) {
                    return Err(IsacError::InvalidPaths(format!(
                        "paths {p} and {q}: cos-AoA separation {sep} below {min_sep}"
                    )));
                }
            }
        }
        Ok(Self { paths })
    }

    pub fn paths(&self) -> &[Path] {
        &self.paths
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }
}

/// Subcarrier assignment (`true` = sensing/pilot) and per-subcarrier power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    pub assignment: Vec<bool>,
    pub power: Vec<f64>,
}

impl Waveform {
    pub fn new(assignment: Vec<bool>, power: Vec<f64>) -> Result<Self> {
        if assignment.len() != power.len() {
            return Err(IsacError::InvalidWaveform(format!(
                "assignment has {} entries, power has {}",
                assignment.len(),
                power.len()
            )));
        }
        if power.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
            return Err(IsacError::InvalidWaveform("powers must be finite and nonnegative".into()));
        }
        Ok(Self { assignment, power })
    }

    pub fn len(&self) -> usize {
        self.power.len()
    }

    pub fn is_empty(&self) -> bool {
        self.power.is_empty()
    }

    /// Assignment as exact 0.0/1.0 weights.
    pub fn assignment_weights(&self) -> Vec<f64> {
        self.assignment.iter().map(|&s| if s { 1.0 } else { 0.0 }).collect()
    }

    pub fn num_sensing(&self) -> usize {
        self.assignment.iter().filter(|&&s| s).count()
    }

    /// Sensing subcarriers with strictly positive power.
    pub fn num_powered_sensing(&self) -> usize {
        self.assignment
            .iter()
            .zip(&self.power)
            .filter(|(&s, &p)| s && p > 0.0)
            .count()
    }

    pub fn total_power(&self) -> f64 {
        self.power.iter().sum()
    }

    /// Checks `0 ≤ Pm ≤ P0` and `ΣPm ≤ P_req·(1 + tol)`.
    pub fn satisfies_power_constraints(&self, config: &SystemConfig, tol: f64) -> bool {
        self.power
            .iter()
            .all(|&p| (0.0..=config.per_subcarrier_cap_w).contains(&p))
            && self.total_power() <= config.total_budget_w * (1.0 + tol)
    }
}

/// Frequency-domain channel vectors, row-major `M × N_r`, with cached gains.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelResponse {
    num_antennas: usize,
    h: Vec<Complex64>,
    gains: Vec<f64>,
}

impl ChannelResponse {
    /// Wraps raw channel rows and computes the gains `‖h_m‖²`.
    pub fn from_rows(h: Vec<Complex64>, num_antennas: usize) -> Self {
        assert!(num_antennas > 0 && h.len().is_multiple_of(num_antennas));
        let gains = h
            .chunks_exact(num_antennas)
            .map(|row| row.iter().map(|c| c.norm_sqr()).sum())
            .collect();
        Self {
            num_antennas,
            h,
            gains,
        }
    }

    /// Channel with prescribed gains and an all-equal direction. Useful when
    /// only the communication side matters.
    pub fn from_gains(gains: &[f64], num_antennas: usize) -> Self {
        let scale = 1.0 / (num_antennas as f64).sqrt();
        let h = gains
            .iter()
            .flat_map(|g| std::iter::repeat_n(Complex64::new(g.sqrt() * scale, 0.0), num_antennas))
            .collect();
        Self::from_rows(h, num_antennas)
    }

    pub fn num_subcarriers(&self) -> usize {
        self.gains.len()
    }

    pub fn num_antennas(&self) -> usize {
        self.num_antennas
    }

    /// Channel vector on storage index `i`.
    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.h[i * self.num_antennas..(i + 1) * self.num_antennas]
    }

    pub fn gains(&self) -> &[f64] {
        &self.gains
    }
}

/// ULA steering vector with half-wavelength spacing: entry n is `exp(−jπ n cos ψ)`.
pub fn steering_vector(aoa_rad: f64, num_antennas: usize) -> Vec<Complex64> {
    steering_vector_cos(aoa_rad.cos(), num_antennas)
}

/// Steering vector parameterized directly by `cos ψ`.
pub fn steering_vector_cos(cos_aoa: f64, num_antennas: usize) -> Vec<Complex64> {
    (0..num_antennas)
        .map(|n| {
            if n == 0 {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::from_polar(1.0, -PI * n as f64 * cos_aoa)
            }
        })
        .collect()
}

/// `h_m = Σ_p b_p exp(−j2π m Δf τ_p) a(ψ_p)` for `m = 1..M`.
pub fn channel_response(config: &SystemConfig, paths: &PathSet) -> ChannelResponse {
    let m_count = config.num_subcarriers;
    let n_r = config.num_rx_antennas;
    let steering: Vec<Vec<Complex64>> = paths
        .paths()
        .iter()
        .map(|p| steering_vector(p.aoa_rad, n_r))
        .collect();
    let mut h = vec![Complex64::new(0.0, 0.0); m_count * n_r];
    for (path, a) in paths.paths().iter().zip(&steering) {
        let phase_step = -2.0 * PI * config.subcarrier_spacing_hz * path.delay_s;
        for i in 0..m_count {
            let coeff =
                path.coefficient * Complex64::from_polar(1.0, phase_step * subcarrier_index(i));
            let row = &mut h[i * n_r..(i + 1) * n_r];
            for (dst, an) in row.iter_mut().zip(a) {
                *dst += coeff * an;
            }
        }
    }
    ChannelResponse::from_rows(h, n_r)
}

/// Per-subcarrier spectral efficiency `log2(1 + g P / σ²)`.
#[inline]
pub fn subcarrier_rate(gain: f64, power: f64, noise_power: f64) -> f64 {
    (gain * power / noise_power).ln_1p() / std::f64::consts::LN_2
}

/// Sum spectral efficiency over communication subcarriers (bits/s/Hz).
pub fn cdr(config: &SystemConfig, channel: &ChannelResponse, waveform: &Waveform) -> f64 {
    channel
        .gains()
        .iter()
        .zip(&waveform.assignment)
        .zip(&waveform.power)
        .filter(|((_, &sensing), _)| !sensing)
        .map(|((&g, _), &p)| subcarrier_rate(g, p, config.noise_power_w))
        .sum()
}


#[cfg(test)]
mod tests {
    use super::test_support::unit_config;
    use super::*;

    fn close(a: Complex64, b: Complex64) -> bool {
        (a - b).norm() < 1e-12
    }

    #[test]
    fn steering_broadside_is_all_ones() {
        let a = steering_vector(PI / 2.0, 4);
        assert!(a.iter().all(|&x| close(x, Complex64::new(1.0, 0.0))));
    }

    #[test]
    fn steering_endfire() {
        let a = steering_vector(0.0, 2);
        assert!(close(a[0], Complex64::new(1.0, 0.0)));
        assert!(close(a[1], Complex64::new(-1.0, 0.0)));
    }

    #[test]
    fn steering_sixty_degrees() {
        let a = steering_vector(PI / 3.0, 3);
        // independent route: cos(π/3) = 1/2, so entry n = (e^{-jπ/2})^n = (-j)^n
        let minus_j = Complex64::new(0.0, -1.0);
        for (n, &x) in a.iter().enumerate() {
            assert!(close(x, minus_j.powu(n as u32)), "entry {n}: {x}");
        }
        assert!(close(a[1], Complex64::new(0.0, -1.0)));
        assert!(close(a[2], Complex64::new(-1.0, 0.0)));
        assert_eq!(a[0], Complex64::new(1.0, 0.0));
    }

    #[test]
    fn steering_entries_have_unit_magnitude() {
        for k in 1..50 {
            let psi = PI * k as f64 / 50.0;
            for x in steering_vector(psi, 9) {
                assert!((x.norm() - 1.0).abs() < 1e-14);
            }
        }
    }

    fn single_path(config: &SystemConfig, b: f64, tau: f64) -> PathSet {
        PathSet::new(vec![Path::new(Complex64::new(b, 0.0), tau, PI / 2.0)], config).unwrap()
    }

    #[test]
    fn zero_delay_broadside_channel() {
        let config = unit_config(6, 3);
        let ch = channel_response(&config, &single_path(&config, 1.0, 0.0));
        for i in 0..6 {
            assert!(ch.row(i).iter().all(|&x| close(x, Complex64::new(1.0, 0.0))));
            assert!((ch.gains()[i] - 3.0).abs() < 1e-12);
        }
        let config = unit_config(6, 4);
        let ch = channel_response(&config, &single_path(&config, 2.0, 0.0));
        assert!(ch.gains().iter().all(|&g| (g - 16.0).abs() < 1e-12));
    }

    #[test]
    fn two_path_channel_alternates() {
        // two paths on the same AoA bypass the separation check, so build rows directly
        let mut config = unit_config(4, 2);
        config.subcarrier_spacing_hz = 1000.0;
        let half = 1.0 / (2.0 * config.subcarrier_spacing_hz);
        let a = single_path(&config, 1.0, 0.0);
        let b = single_path(&config, 1.0, half);
        let ha = channel_response(&config, &a);
        let hb = channel_response(&config, &b);
        let rows: Vec<Complex64> = (0..4)
            .flat_map(|i| {
                ha.row(i)
                    .iter()
                    .zip(hb.row(i))
                    .map(|(x, y)| x + y)
                    .collect::<Vec<_>>()
            })
            .collect();
        let ch = ChannelResponse::from_rows(rows, 2);
        // oracle: per antenna 1 + e^{-jπm}, m = 1..4
        for i in 0..4 {
            let m = (i + 1) as f64;
            let per_antenna = Complex64::new(1.0, 0.0) + Complex64::from_polar(1.0, -PI * m);
            let expected = 2.0 * per_antenna.norm_sqr();
            assert!((ch.gains()[i] - expected).abs() < 1e-9);
        }
        assert!(ch.gains()[0] < 1e-12 && ch.gains()[2] < 1e-12);
        assert!((ch.gains()[1] - 8.0).abs() < 1e-9 && (ch.gains()[3] - 8.0).abs() < 1e-9);
    }

    #[test]
    fn channel_is_linear_in_coefficient() {
        let config = unit_config(8, 4);
        let p1 = PathSet::new(vec![Path::new(Complex64::new(0.3, -0.2), 0.37, 1.1)], &config).unwrap();
        let p2 = PathSet::new(vec![Path::new(Complex64::new(0.6, -0.4), 0.37, 1.1)], &config).unwrap();
        let h1 = channel_response(&config, &p1);
        let h2 = channel_response(&config, &p2);
        for i in 0..8 {
            for (x, y) in h1.row(i).iter().zip(h2.row(i)) {
                assert!(close(*x * 2.0, *y));
            }
        }
    }

    #[test]
    fn gains_match_rows() {
        let config = unit_config(16, 5);
        let paths = PathSet::new(
            vec![
                Path::new(Complex64::new(0.3, 0.1), 0.2, 0.4),
                Path::new(Complex64::new(-0.5, 0.7), 0.6, 2.0),
            ],
            &config,
        )
        .unwrap();
        let ch = channel_response(&config, &paths);
        for i in 0..16 {
            let g: f64 = ch.row(i).iter().map(|c| c.norm_sqr()).sum();
            assert!((g - ch.gains()[i]).abs() <= 1e-12 * g.max(1.0));
        }
    }

    #[test]
    fn cdr_examples() {
        let config = unit_config(2, 1);
        let ch = ChannelResponse::from_gains(&[1.0, 3.0], 1);
        let w = Waveform::new(vec![false, false], vec![1.0, 1.0]).unwrap();
        assert!((cdr(&config, &ch, &w) - 3.0).abs() < 1e-12);

        let w = Waveform::new(vec![true, true], vec![4.0, 7.0]).unwrap();
        assert_eq!(cdr(&config, &ch, &w), 0.0);

        let one = ChannelResponse::from_gains(&[1.0], 1);
        let w = Waveform::new(vec![false], vec![config.noise_power_w]).unwrap();
        assert!((cdr(&config, &one, &w) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cdr_monotone_and_sensing_invariant() {
        let config = unit_config(3, 1);
        let ch = ChannelResponse::from_gains(&[0.5, 2.0, 1.0], 1);
        let base = Waveform::new(vec![false, true, false], vec![1.0, 1.0, 1.0]).unwrap();
        let mut more = base.clone();
        more.power[0] = 2.0;
        assert!(cdr(&config, &ch, &more) > cdr(&config, &ch, &base));
        let mut sensing_changed = base.clone();
        sensing_changed.power[1] = 9.0;
        assert_eq!(cdr(&config, &ch, &sensing_changed), cdr(&config, &ch, &base));
    }

    #[test]
    fn path_set_rejects_bad_paths() {
        let config = unit_config(8, 4);
        let ok = Path::new(Complex64::new(1.0, 0.0), 0.1, 1.0);
        assert!(PathSet::new(vec![], &config).is_err());
        assert!(PathSet::new(vec![Path { delay_s: 1.0, ..ok }], &config).is_err());
        assert!(PathSet::new(vec![Path { coefficient: Complex64::new(0.0, 0.0), ..ok }], &config).is_err());
        // cos separation 0.1 < 2/4
        let close_aoa = Path { aoa_rad: (1.0f64.cos() - 0.1).acos(), ..ok };
        assert!(PathSet::new(vec![ok, close_aoa], &config).is_err());
        let far = Path { aoa_rad: (1.0f64.cos() - 0.6).acos(), ..ok };
        assert!(PathSet::new(vec![ok, far], &config).is_ok());
    }

    #[test]
    fn config_validation() {
        let config = unit_config(8, 2);
        assert!(config.validate().is_ok());
        assert!(SystemConfig { num_subcarriers: 1, ..config.clone() }.validate().is_err());
        assert!(SystemConfig { noise_power_w: 0.0, ..config.clone() }.validate().is_err());
        assert!(SystemConfig { delay_error_bound_s: -1.0, ..config.clone() }.validate().is_err());
        // oversized budget only warns
        assert!(SystemConfig { total_budget_w: 1e9, ..config }.validate().is_ok());
    }
}
