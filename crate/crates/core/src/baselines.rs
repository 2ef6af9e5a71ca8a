//! Reference allocators the optimizer is compared against.
//!
//! - SAUPA: uniform power, assignment optimized with power frozen.
//! - RSAPA: random assignment, power optimized with assignment frozen.
//! - RSAUPA: random assignment, uniform power.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::crb::{sensing_requirement, squared_effective_bandwidth};
use crate::error::{IsacError, Result};
use crate::model::{subcarrier_index, subcarrier_rate, ChannelResponse, PathSet, SystemConfig, Waveform};
use crate::optimizer::{assess, assign_from_gradients, assignment_gradient, optimize_power, OptimizerConfig};

/// Share of subcarriers drawn for sensing by the random baselines.
pub const DEFAULT_SENSING_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum BaselineKind {
    Saupa,
    Rsapa,
    Rsaupa,
}

impl BaselineKind {
    pub fn name(&self) -> &'static str {
        match self {
            BaselineKind::Saupa => "SAUPA",
            BaselineKind::Rsapa => "RSAPA",
            BaselineKind::Rsaupa => "RSAUPA",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineResult {
    pub kind: BaselineKind,
    pub waveform: Waveform,
    pub cdr: f64,
    pub effective_bandwidth: f64,
    pub feasible: bool,
    /// Seed of the random assignment, if one was drawn.
    pub rng_seed: Option<u64>,
}

/// `min(P0, P_req / M)`.
pub fn uniform_power(config: &SystemConfig) -> f64 {
    (config.total_budget_w / config.num_subcarriers as f64).clamp(0.0, config.per_subcarrier_cap_w)
}

/// `⌈fraction·M⌉` distinct sensing subcarriers drawn uniformly.
pub fn random_assignment(num_subcarriers: usize, fraction: f64, seed: u64) -> Result<Vec<bool>> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(IsacError::InvalidConfig(format!(
            "sensing fraction {fraction} outside (0, 1)"
        )));
    }
    let count = ((fraction * num_subcarriers as f64).ceil() as usize).min(num_subcarriers);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = vec![false; num_subcarriers];
    for i in sample(&mut rng, num_subcarriers, count) {
        u[i] = true;
    }
    Ok(u)
}

fn weights(assignment: &[bool]) -> Vec<f64> {
    assignment.iter().map(|&s| if s { 1.0 } else { 0.0 }).collect()
}

fn finish(
    kind: BaselineKind,
    waveform: Waveform,
    channel: &ChannelResponse,
    config: &SystemConfig,
    threshold: f64,
    opt: &OptimizerConfig,
    rng_seed: Option<u64>,
) -> BaselineResult {
    let a = assess(config, channel, threshold, opt.eps_feas, &waveform);
    BaselineResult {
        kind,
        waveform,
        cdr: a.cdr,
        effective_bandwidth: a.effective_bandwidth,
        feasible: a.feasible(),
        rng_seed,
    }
}

/// Assignment chosen by the gradient rule at price `mu` for uniform power
/// `p`, iterated with the centroid of the chosen set until it settles.
fn frozen_power_assignment(gains: &[f64], p: f64, mu: f64, config: &SystemConfig, opt: &OptimizerConfig) -> Vec<bool> {
    let band_centre = (gains.len() as f64 + 1.0) / 2.0;
    let mut y = band_centre;
    let mut u = Vec::new();
    for _ in 0..100 {
        let gradients: Vec<f64> = gains
            .iter()
            .enumerate()
            .map(|(i, &g)| assignment_gradient(subcarrier_index(i), p, g, y, mu, config))
            .collect();
        let next = assign_from_gradients(&gradients, opt.tie_epsilon);
        let (count, sum) = next
            .iter()
            .enumerate()
            .filter(|(_, &s)| s)
            .fold((0usize, 0.0), |(c, s), (i, _)| (c + 1, s + subcarrier_index(i)));
        let y_next = if count > 0 { sum / count as f64 } else { band_centre };
        let settled = next == u;
        u = next;
        if settled || y_next == y {
            break;
        }
        y = y_next;
    }
    u
}

/// Returns sensing subcarriers to communication, highest rate first, as long
/// as the equal-power index variance `p·(Σm² − (Σm)²/n)` stays at `threshold`.
fn prune_sensing(u: &mut [bool], rates: &[f64], p: f64, threshold: f64) {
    let mut members: Vec<usize> = (0..u.len()).filter(|&i| u[i]).collect();
    members.sort_by(|&a, &b| rates[b].total_cmp(&rates[a]).then(a.cmp(&b)));
    let (mut n, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for &i in &members {
        let m = subcarrier_index(i);
        n += 1.0;
        s1 += m;
        s2 += m * m;
    }
    loop {
        let mut changed = false;
        for &i in &members {
            if !u[i] || n <= 2.0 {
                continue;
            }
            let m = subcarrier_index(i);
            let (n2, t1, t2) = (n - 1.0, s1 - m, s2 - m * m);
            if p * (t2 - t1 * t1 / n2) >= threshold {
                u[i] = false;
                (n, s1, s2) = (n2, t1, t2);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
}

/// Sensing set built by rate lost per unit of spread around `y`, cheapest
/// first, until the equal-power index variance reaches `threshold`.
fn ratio_greedy(rates: &[f64], p: f64, y: f64, threshold: f64) -> Option<Vec<bool>> {
    let mut order: Vec<(usize, f64)> = rates
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let d = subcarrier_index(i) - y;
            (i, if d == 0.0 { f64::INFINITY } else { r / (d * d) })
        })
        .collect();
    order.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let mut u = vec![false; rates.len()];
    let (mut n, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for (i, _) in order {
        let m = subcarrier_index(i);
        u[i] = true;
        n += 1.0;
        s1 += m;
        s2 += m * m;
        if n >= 2.0 && p * (s2 - s1 * s1 / n) >= threshold {
            return Some(u);
        }
    }
    None
}

/// SAUPA: every subcarrier at [`uniform_power`]; the assignment comes from
/// the optimizer's gradient rule with power frozen, with the sensing price
/// raised by bisection until the sensing requirement is met. Sensing
/// subcarriers the requirement does not need are then handed back to
/// communication.
pub fn saupa(channel: &ChannelResponse, paths: &PathSet, config: &SystemConfig, opt: &OptimizerConfig) -> BaselineResult {
    let m = config.num_subcarriers;
    let threshold = sensing_requirement(config, paths).binding;
    let p = uniform_power(config);
    let power = vec![p; m];
    let gains = channel.gains();
    let bandwidth = |u: &[bool]| squared_effective_bandwidth(&power, &weights(u));
    let make = |u: Vec<bool>| Waveform {
        assignment: u,
        power: power.clone(),
    };

    let u_free = frozen_power_assignment(gains, p, 0.0, config, opt);
    if threshold <= 0.0 || bandwidth(&u_free) >= threshold || p <= 0.0 {
        return finish(BaselineKind::Saupa, make(u_free), channel, config, threshold, opt, None);
    }

    // price at which the best-placed subcarrier pays off
    let max_rate = gains
        .iter()
        .map(|&g| subcarrier_rate(g, p, config.noise_power_w))
        .fold(0.0, f64::max);
    let half = m as f64 / 2.0;
    let mut hi = max_rate.max(f64::MIN_POSITIVE) / (p * half * half);
    let mut u_hi = frozen_power_assignment(gains, p, hi, config, opt);
    let mut doublings = 0;
    while bandwidth(&u_hi) < threshold && u_hi.iter().any(|&s| !s) && doublings < 200 {
        hi *= 2.0;
        u_hi = frozen_power_assignment(gains, p, hi, config, opt);
        doublings += 1;
    }
    if bandwidth(&u_hi) < threshold {
        return finish(BaselineKind::Saupa, make(u_hi), channel, config, threshold, opt, None);
    }
    let mut lo = 0.0;
    for _ in 0..100 {
        let mid = if lo > 0.0 { (lo * hi).sqrt() } else { hi / 2.0 };
        let u_mid = frozen_power_assignment(gains, p, mid, config, opt);
        if bandwidth(&u_mid) >= threshold {
            hi = mid;
            u_hi = u_mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-9 * hi {
            break;
        }
    }
    let rates: Vec<f64> = gains.iter().map(|&g| subcarrier_rate(g, p, config.noise_power_w)).collect();
    prune_sensing(&mut u_hi, &rates, p, threshold);

    // the centroid iteration above can settle on a lopsided set; a direct
    // ratio ranking around the band centre and around each resulting
    // centroid competes with it
    let lost = |u: &[bool]| -> f64 { u.iter().zip(&rates).filter(|(&s, _)| s).map(|(_, r)| r).sum() };
    let mut best = u_hi;
    let mut y = (m as f64 + 1.0) / 2.0;
    for _ in 0..4 {
        let Some(mut u) = ratio_greedy(&rates, p, y, threshold) else {
            break;
        };
        prune_sensing(&mut u, &rates, p, threshold);
        let (count, sum) = u
            .iter()
            .enumerate()
            .filter(|(_, &s)| s)
            .fold((0.0, 0.0), |(c, s), (i, _)| (c + 1.0, s + subcarrier_index(i)));
        if lost(&u) < lost(&best) {
            best = u;
        }
        y = sum / count;
    }
    finish(BaselineKind::Saupa, make(best), channel, config, threshold, opt, None)
}

/// Random assignment that cannot meet the sensing requirement even with
/// every sensing subcarrier at full power is rejected.
fn checked_random_assignment(config: &SystemConfig, threshold: f64, fraction: f64, seed: u64) -> Result<Vec<bool>> {
    let u = random_assignment(config.num_subcarriers, fraction, seed)?;
    let full = vec![config.per_subcarrier_cap_w; config.num_subcarriers];
    if threshold > 0.0 && squared_effective_bandwidth(&full, &weights(&u)) < threshold {
        return Err(IsacError::InfeasibleSensing);
    }
    Ok(u)
}

/// RSAPA: random assignment, powers from the optimizer's power blocks.
pub fn rsapa(
    channel: &ChannelResponse,
    paths: &PathSet,
    config: &SystemConfig,
    opt: &OptimizerConfig,
    fraction: f64,
    seed: u64,
) -> Result<BaselineResult> {
    let threshold = sensing_requirement(config, paths).binding;
    let u = checked_random_assignment(config, threshold, fraction, seed)?;
    let r = optimize_power(channel, paths, config, opt, u);
    Ok(BaselineResult {
        kind: BaselineKind::Rsapa,
        waveform: r.waveform,
        cdr: r.achieved_cdr,
        effective_bandwidth: r.achieved_effective_bandwidth,
        feasible: r.feasible,
        rng_seed: Some(seed),
    })
}

/// RSAUPA: the RSAPA assignment for the same seed with uniform power.
pub fn rsaupa(
    channel: &ChannelResponse,
    paths: &PathSet,
    config: &SystemConfig,
    opt: &OptimizerConfig,
    fraction: f64,
    seed: u64,
) -> Result<BaselineResult> {
    let threshold = sensing_requirement(config, paths).binding;
    let u = checked_random_assignment(config, threshold, fraction, seed)?;
    let waveform = Waveform {
        assignment: u,
        power: vec![uniform_power(config); config.num_subcarriers],
    };
    Ok(finish(BaselineKind::Rsaupa, waveform, channel, config, threshold, opt, Some(seed)))
}
