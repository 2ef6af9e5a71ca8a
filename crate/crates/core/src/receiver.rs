//! Receive chain: received-signal synthesis, AoA estimation by spatial
//! matched filtering, per-path beamforming with pilot demodulation, and
//! maximum-likelihood delay/coefficient estimation.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{IsacError, Result};
use crate::model::{steering_vector_cos, subcarrier_index, ChannelResponse, SystemConfig, Waveform};

/// Received frequency-domain samples of one OFDM symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct RxSnapshot {
    num_antennas: usize,
    /// `M × N_r`, row-major by subcarrier.
    y: Vec<Complex64>,
    pilots: Vec<Complex64>,
    waveform: Waveform,
}

impl RxSnapshot {
    pub fn new(y: Vec<Complex64>, num_antennas: usize, pilots: Vec<Complex64>, waveform: Waveform) -> Result<Self> {
        let m = waveform.len();
        if num_antennas == 0 || y.len() != m * num_antennas || pilots.len() != m {
            return Err(IsacError::InvalidWaveform(format!(
                "snapshot of {} samples and {} pilots does not match {m} subcarriers x {num_antennas} antennas",
                y.len(),
                pilots.len()
            )));
        }
        if pilots.iter().any(|s| (s.norm() - 1.0).abs() > 1e-9) {
            return Err(IsacError::InvalidWaveform("pilot symbols must be unit-modulus".into()));
        }
        Ok(Self {
            num_antennas,
            y,
            pilots,
            waveform,
        })
    }

    pub fn num_antennas(&self) -> usize {
        self.num_antennas
    }

    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.y[i * self.num_antennas..(i + 1) * self.num_antennas]
    }

    pub fn pilots(&self) -> &[Complex64] {
        &self.pilots
    }

    pub fn waveform(&self) -> &Waveform {
        &self.waveform
    }
}

pub fn unit_pilots(num_subcarriers: usize) -> Vec<Complex64> {
    vec![Complex64::new(1.0, 0.0); num_subcarriers]
}

/// Circularly-symmetric complex Gaussian sample with variance `variance`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

/// Unit-variance complex Gaussian data symbols.
pub fn random_data_symbols<R: Rng + ?Sized>(num_subcarriers: usize, rng: &mut R) -> Vec<Complex64> {
    (0..num_subcarriers).map(|_| complex_gaussian(rng, 1.0)).collect()
}

/// `y_m = √P_m h_m x_m + w_m` with `x_m` the pilot on sensing subcarriers and
/// the data symbol otherwise, `w_m ~ CN(0, σ² I)` drawn from `rng`.
pub fn simulate_rx<R: Rng + ?Sized>(
    channel: &ChannelResponse,
    waveform: &Waveform,
    pilots: &[Complex64],
    data: &[Complex64],
    config: &SystemConfig,
    rng: &mut R,
) -> Result<RxSnapshot> {
    let m = channel.num_subcarriers();
    if waveform.len() != m || data.len() != m {
        return Err(IsacError::InvalidWaveform(format!(
            "waveform or data length differs from {m} subcarriers"
        )));
    }
    let n_r = channel.num_antennas();
    let mut y = Vec::with_capacity(m * n_r);
    for i in 0..m {
        let symbol = if waveform.assignment[i] { pilots[i] } else { data[i] };
        let scale = waveform.power[i].sqrt() * symbol;
        for &h in channel.row(i) {
            y.push(scale * h + complex_gaussian(rng, config.noise_power_w));
        }
    }
    RxSnapshot::new(y, n_r, pilots.to_vec(), waveform.clone())
}

/// One spatial-spectrum peak.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AoaEstimate {
    pub aoa_rad: f64,
    pub cos_aoa: f64,
    /// Spatial spectrum at the peak after removing earlier peaks.
    pub spectrum: f64,
    /// Whether the peak clears the noise-only detection threshold.
    pub confident: bool,
}

/// Hermitian `N_r × N_r` sample covariance `Σ_m y_m y_mᴴ`, row-major.
fn sample_covariance(snapshot: &RxSnapshot) -> Vec<Complex64> {
    let n = snapshot.num_antennas;
    let mut r = vec![Complex64::new(0.0, 0.0); n * n];
    for i in 0..snapshot.waveform.len() {
        let y = snapshot.row(i);
        for a in 0..n {
            let ya = y[a];
            for b in 0..n {
                r[a * n + b] += ya * y[b].conj();
            }
        }
    }
    r
}

/// `aᴴ R a / N_r`.
fn spatial_spectrum(r: &[Complex64], a: &[Complex64]) -> f64 {
    let n = a.len();
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..n {
        let mut row = Complex64::new(0.0, 0.0);
        for j in 0..n {
            row += r[i * n + j] * a[j];
        }
        acc += a[i].conj() * row;
    }
    acc.re / n as f64
}

/// `R ← Π R Π` with `Π = I − a aᴴ / N_r`.
fn deflate(r: &mut [Complex64], a: &[Complex64]) {
    let n = a.len();
    let nf = n as f64;
    let project = |v: &mut [Complex64]| {
        let c: Complex64 = a.iter().zip(v.iter()).map(|(ai, vi)| ai.conj() * vi).sum::<Complex64>() / nf;
        for (vi, ai) in v.iter_mut().zip(a) {
            *vi -= c * ai;
        }
    };
    let mut col = vec![Complex64::new(0.0, 0.0); n];
    for j in 0..n {
        for i in 0..n {
            col[i] = r[i * n + j];
        }
        project(&mut col);
        for i in 0..n {
            r[i * n + j] = col[i];
        }
    }
    for i in 0..n {
        // rows are projected through the conjugate: R Π = (Π Rᴴ)ᴴ and R is Hermitian
        let mut row: Vec<Complex64> = r[i * n..(i + 1) * n].iter().map(|x| x.conj()).collect();
        project(&mut row);
        for j in 0..n {
            r[i * n + j] = row[j].conj();
        }
    }
}

/// Estimates `num_paths` AoAs.
///
/// The spatial matched filter is evaluated noncoherently over all subcarriers,
/// `S(ψ) = Σ_m |a(ψ)ᴴ y_m|² / N_r`, on `grid_size` points uniform in `cos ψ`.
/// Peaks are taken one at a time; after each, its steering direction is
/// projected out so sidelobes of strong paths do not mask weak ones. Grid
/// points within `1/N_r` in `cos ψ` of an earlier peak are skipped, and each
/// peak is refined by a parabola through its three grid samples.
pub fn estimate_aoa(
    snapshot: &RxSnapshot,
    config: &SystemConfig,
    num_paths: usize,
    grid_size: usize,
) -> Result<Vec<AoaEstimate>> {
    let n_r = snapshot.num_antennas;
    let grid_size = grid_size.max(3);
    let step = 2.0 / grid_size as f64;
    let grid: Vec<f64> = (0..grid_size).map(|k| -1.0 + (k as f64 + 0.5) * step).collect();
    let steering: Vec<Vec<Complex64>> = grid.iter().map(|&c| steering_vector_cos(c, n_r)).collect();
    // found directions are projected out, so exclusion only has to stop a
    // peak from being picked twice; half the resolution limit leaves room for
    // estimation error on paths exactly 2/N_r apart
    let separation = 1.0 / n_r as f64;

    // noise-only S(ψ) has mean M σ² and standard deviation √M σ²
    let m = snapshot.waveform.len() as f64;
    let threshold = config.noise_power_w * (m + 3.0 * m.sqrt());

    let mut r = sample_covariance(snapshot);
    let mut found: Vec<AoaEstimate> = Vec::with_capacity(num_paths);
    while found.len() < num_paths {
        let spectrum: Vec<f64> = steering.iter().map(|a| spatial_spectrum(&r, a)).collect();
        let peak = (0..grid_size)
            .filter(|&k| {
                let left = if k > 0 { spectrum[k - 1] } else { f64::NEG_INFINITY };
                let right = if k + 1 < grid_size { spectrum[k + 1] } else { f64::NEG_INFINITY };
                spectrum[k] >= left && spectrum[k] >= right
            })
            .filter(|&k| found.iter().all(|e| (grid[k] - e.cos_aoa).abs() >= separation))
            .max_by(|&a, &b| spectrum[a].total_cmp(&spectrum[b]));
        let Some(k) = peak else {
            return Err(IsacError::FewerPeaksThanPaths {
                found: found.len(),
                expected: num_paths,
            });
        };
        let mut cos_aoa = grid[k];
        if k > 0 && k + 1 < grid_size {
            let (l, c, rr) = (spectrum[k - 1], spectrum[k], spectrum[k + 1]);
            let denom = l - 2.0 * c + rr;
            if denom < 0.0 {
                cos_aoa += 0.5 * (l - rr) / denom * step;
            }
        }
        let cos_aoa = cos_aoa.clamp(-1.0 + 1e-12, 1.0 - 1e-12);
        let a = steering_vector_cos(cos_aoa, n_r);
        let value = spatial_spectrum(&r, &a);
        found.push(AoaEstimate {
            aoa_rad: cos_aoa.acos(),
            cos_aoa,
            spectrum: value,
            confident: value > threshold,
        });
        deflate(&mut r, &a);
    }
    Ok(found)
}

/// `ỹ_m = a(ψ̂)ᴴ y_m s_m* / √N_r` on sensing subcarriers, zero elsewhere.
pub fn extract_and_demodulate(snapshot: &RxSnapshot, aoa_rad: f64) -> Vec<Complex64> {
    let n_r = snapshot.num_antennas;
    let a = steering_vector_cos(aoa_rad.cos(), n_r);
    let norm = (n_r as f64).sqrt();
    (0..snapshot.waveform.len())
        .map(|i| {
            if !snapshot.waveform.assignment[i] {
                return Complex64::new(0.0, 0.0);
            }
            let beam: Complex64 = a.iter().zip(snapshot.row(i)).map(|(ai, yi)| ai.conj() * yi).sum();
            beam * snapshot.pilots[i].conj() / norm
        })
        .collect()
}

/// Delay search grid: spacing `1 / (oversampling · M · Δf)` over one period
/// `[0, 1/Δf)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelayGrid {
    pub oversampling: usize,
}

impl Default for DelayGrid {
    fn default() -> Self {
        Self { oversampling: 8 }
    }
}

/// Estimated parameters of one path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathEstimate {
    pub aoa_rad: f64,
    pub coefficient: Complex64,
    pub delay_s: f64,
    /// `|Σ w_m e^{+j2πmΔfτ̂}|² / (N_r Σ u_m P_m)`: the log-likelihood gain of
    /// the fitted path over the zero model, times σ².
    pub likelihood: f64,
}

/// Concentrated maximum-likelihood delay estimator with a reusable FFT plan.
pub struct DelayEstimator {
    num_subcarriers: usize,
    num_antennas: usize,
    spacing_hz: f64,
    grid_len: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for DelayEstimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DelayEstimator")
            .field("num_subcarriers", &self.num_subcarriers)
            .field("grid_len", &self.grid_len)
            .finish()
    }
}

impl DelayEstimator {
    pub fn new(config: &SystemConfig, grid: DelayGrid) -> Result<Self> {
        if grid.oversampling < 4 {
            return Err(IsacError::CoarseDelayGrid {
                points_per_mainlobe: grid.oversampling,
            });
        }
        let grid_len = grid.oversampling * config.num_subcarriers;
        let fft = FftPlanner::new().plan_fft_inverse(grid_len);
        Ok(Self {
            num_subcarriers: config.num_subcarriers,
            num_antennas: config.num_rx_antennas,
            spacing_hz: config.subcarrier_spacing_hz,
            grid_len,
            fft,
        })
    }

    pub fn grid_spacing_s(&self) -> f64 {
        1.0 / (self.grid_len as f64 * self.spacing_hz)
    }

    /// Matched-filter weights `w_m = u_m √(P_m N_r) ỹ_m`.
    fn weights(&self, demodulated: &[Complex64], waveform: &Waveform) -> Vec<Complex64> {
        let n_r = self.num_antennas as f64;
        demodulated
            .iter()
            .zip(&waveform.assignment)
            .zip(&waveform.power)
            .map(|((&y, &s), &p)| if s { y * (p * n_r).sqrt() } else { Complex64::new(0.0, 0.0) })
            .collect()
    }

    /// `Σ_m w_m e^{+j2πmΔfτ}` with 1-based `m`.
    fn correlate(&self, w: &[Complex64], tau: f64) -> Complex64 {
        let step = 2.0 * PI * self.spacing_hz * tau;
        w.iter()
            .enumerate()
            .filter(|(_, x)| x.re != 0.0 || x.im != 0.0)
            .map(|(i, &x)| x * Complex64::from_polar(1.0, step * subcarrier_index(i)))
            .sum()
    }

    /// Concentrated objective `|Σ_m w_m e^{+j2πmΔfτ}|²`.
    pub fn objective(&self, demodulated: &[Complex64], waveform: &Waveform, tau: f64) -> f64 {
        self.correlate(&self.weights(demodulated, waveform), tau).norm_sqr()
    }

    /// Closed-form least-squares coefficient for a given delay.
    pub fn coefficient_at(&self, demodulated: &[Complex64], waveform: &Waveform, tau: f64) -> Complex64 {
        let w = self.weights(demodulated, waveform);
        let denom = self.num_antennas as f64 * sensing_power(waveform);
        self.correlate(&w, tau) / denom
    }

    /// Grid search followed by golden-section refinement. The refinement runs
    /// to `10⁻⁸/(M Δf)`, well inside the mainlobe resolution, because the
    /// phase of `b̂` inherits any residual delay error scaled by `π M Δf`.
    pub fn estimate(&self, demodulated: &[Complex64], waveform: &Waveform, aoa_rad: f64) -> Result<PathEstimate> {
        if demodulated.len() != self.num_subcarriers || waveform.len() != self.num_subcarriers {
            return Err(IsacError::InvalidWaveform(format!(
                "expected {} subcarriers",
                self.num_subcarriers
            )));
        }
        if waveform.num_powered_sensing() < 2 {
            return Err(IsacError::InfeasibleSensing);
        }
        let w = self.weights(demodulated, waveform);

        // grid point k ↔ τ = k/(L Δf): Σ w_m e^{+j2π m k / L} is an inverse DFT
        let mut buf = vec![Complex64::new(0.0, 0.0); self.grid_len];
        for (i, &x) in w.iter().enumerate() {
            buf[(i + 1) % self.grid_len] += x;
        }
        self.fft.process(&mut buf);
        let k_best = buf
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm_sqr().total_cmp(&b.1.norm_sqr()))
            .map(|(k, _)| k)
            .unwrap_or(0);

        let h = self.grid_spacing_s();
        let period = 1.0 / self.spacing_hz;
        let tol = 1e-8 / (self.num_subcarriers as f64 * self.spacing_hz);
        let f = |tau: f64| self.correlate(&w, tau).norm_sqr();
        let center = k_best as f64 * h;
        let tau = golden_section_max(f, center - h, center + h, tol).rem_euclid(period);
        let tau = if tau >= period { 0.0 } else { tau };

        let denom = self.num_antennas as f64 * sensing_power(waveform);
        let corr = self.correlate(&w, tau);
        Ok(PathEstimate {
            aoa_rad,
            coefficient: corr / denom,
            delay_s: tau,
            likelihood: corr.norm_sqr() / denom,
        })
    }
}

fn sensing_power(waveform: &Waveform) -> f64 {
    waveform
        .power
        .iter()
        .zip(&waveform.assignment)
        .filter(|(_, &s)| s)
        .map(|(p, _)| p)
        .sum()
}

/// Maximizer of a unimodal `f` on `[a, b]` to interval width `tol`.
fn golden_section_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// One-shot concentrated ML estimate; prefer [`DelayEstimator`] when the
/// same configuration is reused.
pub fn jpcde_mle(
    demodulated: &[Complex64],
    waveform: &Waveform,
    config: &SystemConfig,
    grid: DelayGrid,
) -> Result<PathEstimate> {
    DelayEstimator::new(config, grid)?.estimate(demodulated, waveform, f64::NAN)
}

/// Full chain for one snapshot: AoAs, then per-path extraction and delay
/// estimation. Estimates are returned in order of detection.
pub fn estimate_paths(
    snapshot: &RxSnapshot,
    config: &SystemConfig,
    num_paths: usize,
    aoa_grid_size: usize,
    estimator: &DelayEstimator,
) -> Result<Vec<PathEstimate>> {
    estimate_aoa(snapshot, config, num_paths, aoa_grid_size)?
        .into_iter()
        .map(|aoa| {
            let y = extract_and_demodulate(snapshot, aoa.aoa_rad);
            estimator.estimate(&y, &snapshot.waveform, aoa.aoa_rad)
        })
        .collect()
}
