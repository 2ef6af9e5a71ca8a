#![allow(dead_code)]

use std::f64::consts::PI;

use isac_core::harness::generate_paths;
use isac_core::{PathSet, SystemConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small unit-spacing configuration whose binding sensing threshold is
/// `threshold_fraction` of what the two band-edge subcarriers reach at `P0`.
pub fn small_scenario(m: usize, budget_fraction: f64, threshold_fraction: f64, seed: u64) -> (SystemConfig, PathSet) {
    let mut config = SystemConfig {
        num_subcarriers: m,
        subcarrier_spacing_hz: 1.0,
        num_rx_antennas: 4,
        noise_power_w: 0.05,
        per_subcarrier_cap_w: 1.0,
        total_budget_w: budget_fraction * m as f64,
        delay_error_bound_s: 1.0,
        carrier_frequency_hz: None,
        speed_of_light: 3e8,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let paths = generate_paths(&config, rng.random_range(1..=3), &mut rng).unwrap();
    let half = (m - 1) as f64 / 2.0;
    let target = threshold_fraction * 2.0 * config.per_subcarrier_cap_w * half * half;
    config.delay_error_bound_s = delay_bound_for(&config, &paths, target);
    (config, paths)
}

/// `J0` at which the binding squared-effective-bandwidth threshold is `target`.
pub fn delay_bound_for(config: &SystemConfig, paths: &PathSet, target: f64) -> f64 {
    let b_min = paths.paths().iter().map(|p| p.coefficient.norm_sqr()).fold(f64::INFINITY, f64::min);
    let df = config.subcarrier_spacing_hz;
    (config.noise_power_w / (8.0 * config.num_rx_antennas as f64 * b_min * PI * PI * df * df * target)).sqrt()
}

/// Largest `Σ p (m − y)²` with `Σ p = total`, `0 ≤ p ≤ cap`: fill farthest first.
fn greedy_spread(indices: &[f64], y: f64, total: f64, cap: f64) -> f64 {
    let mut d2: Vec<f64> = indices.iter().map(|m| (m - y) * (m - y)).collect();
    d2.sort_by(|a, b| b.total_cmp(a));
    let mut left = total;
    let mut acc = 0.0;
    for d in d2 {
        let p = left.min(cap);
        acc += p * d;
        left -= p;
        if left <= 0.0 {
            break;
        }
    }
    acc
}

/// Largest power-weighted index variance reachable with exactly `total`
/// power on `indices`, via `max_p min_y = min_y max_p` and a convex search in y.
pub fn max_bandwidth(indices: &[f64], total: f64, cap: f64) -> f64 {
    let lo0 = indices.iter().copied().fold(f64::INFINITY, f64::min);
    let hi0 = indices.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut lo, mut hi) = (lo0, hi0);
    for _ in 0..200 {
        let a = lo + (hi - lo) / 3.0;
        let b = hi - (hi - lo) / 3.0;
        if greedy_spread(indices, a, total, cap) > greedy_spread(indices, b, total, cap) {
            lo = a;
        } else {
            hi = b;
        }
    }
    greedy_spread(indices, 0.5 * (lo + hi), total, cap)
}

/// Smallest total sensing power on `indices` whose best allocation reaches
/// `threshold`; `None` when even every subcarrier at `cap` falls short.
pub fn min_sensing_power(indices: &[f64], threshold: f64, cap: f64) -> Option<f64> {
    let full = cap * indices.len() as f64;
    if indices.len() < 2 || max_bandwidth(indices, full, cap) < threshold {
        return None;
    }
    let (mut lo, mut hi) = (0.0, full);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if max_bandwidth(indices, mid, cap) >= threshold {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

/// Best `Σ log2(1 + g p/σ²)` over `0 ≤ p ≤ cap`, `Σ p ≤ budget`, by bisection
/// on the water level.
pub fn water_filled_rate(gains: &[f64], budget: f64, noise: f64, cap: f64) -> f64 {
    let power_at = |level: f64| -> Vec<f64> { gains.iter().map(|g| (level - noise / g).clamp(0.0, cap)).collect() };
    let spend = |level: f64| power_at(level).iter().sum::<f64>();
    let top = cap + gains.iter().map(|g| noise / g).fold(0.0, f64::max);
    let level = if spend(top) <= budget {
        top
    } else {
        let (mut lo, mut hi) = (0.0, top);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if spend(mid) > budget {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    };
    gains
        .iter()
        .zip(power_at(level))
        .map(|(g, p)| (1.0 + g * p / noise).log2())
        .sum()
}
