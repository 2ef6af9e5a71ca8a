//! Joint subcarrier assignment and power allocation by block coordinate
//! descent on the Lagrangian of the relaxed problem
//!
//! ```text
//! max  Σ (1−um) log2(1 + gm Pm / σ²)
//! s.t. Σ Pm ≤ P_req,   Σ Pm um (m − y)² ≥ J,   0 ≤ Pm ≤ P0,   um ∈ [0, 1]
//! ```
//!
//! where the fractional effective-bandwidth constraint has been replaced by
//! its quadratic-transform surrogate with auxiliary centroid `y`. One sweep:
//!
//! 1. bounded water-filling on communication subcarriers (price `λ`),
//! 2. minimal full-power-first allocation on sensing subcarriers,
//! 3. centroid update `y = Σ Pm um m / Σ Pm um`,
//! 4. binary assignment from the sign of `∂L/∂um`,
//! 5. projected subgradient steps on `λ` and `μ`.
//!
//! Constraint violations are corrected only through the duals; the result is
//! the best feasible iterate seen.

use std::cmp::Ordering;
use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::crb::{sensing_requirement, squared_effective_bandwidth, SensingRequirement};
use crate::error::{IsacError, Result};
use crate::model::{cdr, subcarrier_index, subcarrier_rate, ChannelResponse, PathSet, SystemConfig, Waveform};

/// Decay rule for subgradient step sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepDecay {
    Constant,
    /// `η(k) = η(0) / √k`
    InvSqrt,
}

/// Step-size schedule. `initial` is dimensionless: it is multiplied by the
/// natural dual scale and divided by the constraint scale at run time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub initial: f64,
    pub decay: StepDecay,
}

impl StepSchedule {
    pub fn factor(&self, k: usize) -> f64 {
        match self.decay {
            StepDecay::Constant => self.initial,
            StepDecay::InvSqrt => self.initial / (k.max(1) as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    pub step_lambda: StepSchedule,
    pub step_mu: StepSchedule,
    /// Relative Lagrangian change regarded as stalled.
    pub eps_lag: f64,
    /// Relative constraint violation tolerated in a feasible result.
    pub eps_feas: f64,
    /// Width of the band below zero that still assigns a subcarrier to sensing.
    pub tie_epsilon: f64,
    /// Consecutive stalled iterations required to stop.
    pub stall_iterations: usize,
    /// Fraction of subcarriers (nearest the band edges) that start as sensing.
    pub init_sensing_fraction: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            step_lambda: StepSchedule {
                initial: 0.5,
                decay: StepDecay::InvSqrt,
            },
            step_mu: StepSchedule {
                initial: 0.5,
                decay: StepDecay::InvSqrt,
            },
            eps_lag: 1e-7,
            eps_feas: 1e-3,
            tie_epsilon: 0.0,
            stall_iterations: 10,
            init_sensing_fraction: 0.1,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("step_lambda.initial", self.step_lambda.initial),
            ("step_mu.initial", self.step_mu.initial),
            ("eps_lag", self.eps_lag),
            ("eps_feas", self.eps_feas),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(IsacError::InvalidConfig(format!("optimizer.{name} must be positive")));
            }
        }
        if self.max_iterations == 0 || self.stall_iterations == 0 {
            return Err(IsacError::InvalidConfig(
                "optimizer.max_iterations and stall_iterations must be positive".into(),
            ));
        }
        if !(self.tie_epsilon >= 0.0) {
            return Err(IsacError::InvalidConfig("optimizer.tie_epsilon must be nonnegative".into()));
        }
        if !(self.init_sensing_fraction > 0.0 && self.init_sensing_fraction < 1.0) {
            return Err(IsacError::InvalidConfig(
                "optimizer.init_sensing_fraction must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// BCD iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub waveform: Waveform,
    pub centroid: f64,
    pub lambda: f64,
    pub mu: f64,
    pub iteration: usize,
    pub last_lagrangian: f64,
    pub budget_feasible: bool,
    pub sensing_feasible: bool,
}

/// One row of the convergence trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub cdr: f64,
    pub effective_bandwidth: f64,
    pub lambda: f64,
    pub mu: f64,
    pub num_sensing: usize,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationResult {
    pub waveform: Waveform,
    pub achieved_cdr: f64,
    pub achieved_effective_bandwidth: f64,
    pub feasible: bool,
    pub iterations_used: usize,
    pub trace: Vec<IterationRecord>,
}

/// Result of the sensing power step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensingAllocation {
    /// Number of sensing subcarriers that carry power (1-based position of
    /// the residual subcarrier). `num_sensing + 1` when the threshold is out
    /// of reach.
    pub q_bar: usize,
    pub feasible: bool,
    pub power_used: f64,
}

/// Power-weighted centroid of the sensing subcarriers.
pub fn update_centroid(waveform: &Waveform) -> Result<f64> {
    centroid(&waveform.power, &waveform.assignment)
}

fn centroid(power: &[f64], assignment: &[bool]) -> Result<f64> {
    let (mut s0, mut s1) = (0.0, 0.0);
    for (i, (&p, &s)) in power.iter().zip(assignment).enumerate() {
        if s && p > 0.0 {
            s0 += p;
            s1 += p * subcarrier_index(i);
        }
    }
    if s0 > 0.0 {
        Ok(s1 / s0)
    } else {
        Err(IsacError::EmptySensingSet)
    }
}

/// `[1/(λ ln 2) − σ²/g]` clipped to `[0, P0]`.
pub fn water_filling_power(gain: f64, lambda: f64, config: &SystemConfig) -> f64 {
    if gain <= 0.0 {
        return 0.0;
    }
    let level = 1.0 / (lambda * LN_2);
    (level - config.noise_power_w / gain).clamp(0.0, config.per_subcarrier_cap_w)
}

/// Bounded water-filling on every communication subcarrier; sensing entries
/// of `power` are left untouched.
pub fn comm_power_update(
    channel: &ChannelResponse,
    assignment: &[bool],
    lambda: f64,
    config: &SystemConfig,
    power: &mut [f64],
) -> Result<()> {
    let gains = channel.gains();
    if lambda <= 0.0 && gains.iter().zip(assignment).any(|(&g, &s)| !s && g > 0.0) {
        return Err(IsacError::LambdaZero);
    }
    for ((p, &g), &s) in power.iter_mut().zip(gains).zip(assignment) {
        if !s {
            *p = water_filling_power(g, lambda, config);
        }
    }
    Ok(())
}

/// Water-filling price `λ` at which communication subcarriers spend exactly
/// `budget`. When even full power fits, returns the largest `λ` that still
/// saturates every active subcarrier at `P0`.
pub fn water_filling_lambda(
    channel: &ChannelResponse,
    assignment: &[bool],
    budget: f64,
    config: &SystemConfig,
) -> f64 {
    let active: Vec<f64> = channel
        .gains()
        .iter()
        .zip(assignment)
        .filter(|(&g, &s)| !s && g > 0.0)
        .map(|(&g, _)| g)
        .collect();
    if active.is_empty() {
        return 1.0;
    }
    let floor_max = active.iter().map(|g| config.noise_power_w / g).fold(0.0, f64::max);
    let floor_min = active.iter().map(|g| config.noise_power_w / g).fold(f64::INFINITY, f64::min);
    let p0 = config.per_subcarrier_cap_w;
    // level → λ = 1/(level ln2)
    let spend = |level: f64| -> f64 {
        active
            .iter()
            .map(|g| (level - config.noise_power_w / g).clamp(0.0, p0))
            .sum()
    };
    let saturating_level = p0 + floor_max;
    if spend(saturating_level) <= budget {
        return 1.0 / (saturating_level * LN_2);
    }
    let (mut lo, mut hi) = (floor_min, saturating_level);
    if budget <= 0.0 {
        return 1.0 / (lo * LN_2);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if spend(mid) > budget {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    1.0 / (lo * LN_2)
}

/// Minimal sensing power meeting `Σ Pm (m − y)² ≥ threshold`: subcarriers
/// farthest from `y` get `P0` first, one residual subcarrier closes the gap.
/// Communication entries of `power` are left untouched.
pub fn sensing_power_update(
    centroid: f64,
    assignment: &[bool],
    threshold: f64,
    config: &SystemConfig,
    power: &mut [f64],
) -> SensingAllocation {
    let p0 = config.per_subcarrier_cap_w;
    let mut order: Vec<(usize, f64)> = assignment
        .iter()
        .enumerate()
        .filter(|(_, &s)| s)
        .map(|(i, _)| {
            let d = subcarrier_index(i) - centroid;
            (i, d * d)
        })
        .collect();
    order.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));

    let mut covered = 0.0;
    let mut q_bar = None;
    for (q, &(i, d2)) in order.iter().enumerate() {
        match q_bar {
            Some(_) => power[i] = 0.0,
            None => {
                if d2 > 0.0 && covered + d2 * p0 >= threshold {
                    power[i] = ((threshold - covered) / d2).clamp(0.0, p0);
                    q_bar = Some(q + 1);
                } else {
                    power[i] = p0;
                    covered += d2 * p0;
                }
            }
        }
    }
    let power_used = order.iter().map(|&(i, _)| power[i]).sum();
    match q_bar {
        Some(q_bar) => SensingAllocation {
            q_bar,
            feasible: true,
            power_used,
        },
        None => SensingAllocation {
            q_bar: order.len() + 1,
            feasible: false,
            power_used,
        },
    }
}

/// Sensing power step solved jointly with the centroid.
///
/// Allocating against a stale centroid can meet `Σ Pm (m − y)² ≥ threshold`
/// while piling the power on one band edge, where the true spread is tiny.
/// Bisection on `y` looks for the point where the allocation's own centroid
/// equals `y`; there the surrogate and the effective bandwidth coincide.
/// Returns the allocation and its centroid (`None` without sensing power).
pub fn balanced_sensing_power(
    assignment: &[bool],
    threshold: f64,
    config: &SystemConfig,
    power: &mut [f64],
) -> (SensingAllocation, Option<f64>) {
    let first = assignment.iter().position(|&s| s);
    let last = assignment.iter().rposition(|&s| s);
    let (Some(first), Some(last)) = (first, last) else {
        return (
            SensingAllocation {
                q_bar: 1,
                feasible: false,
                power_used: 0.0,
            },
            None,
        );
    };
    let (mut lo, mut hi) = (subcarrier_index(first), subcarrier_index(last));
    // drift(y) = centroid(P_y) − y is positive at the low end, negative at the high end
    let drift = |y: f64, power: &mut [f64]| -> (SensingAllocation, Option<f64>) {
        let sa = sensing_power_update(y, assignment, threshold, config, power);
        (sa, centroid(power, assignment).ok())
    };
    for _ in 0..64 {
        if hi - lo <= 1e-9 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        match drift(mid, power) {
            (_, Some(c)) if c > mid => lo = mid,
            (_, Some(c)) if c < mid => hi = mid,
            (_, Some(_)) => {
                lo = mid;
                hi = mid;
            }
            (_, None) => break,
        }
    }
    let y = 0.5 * (lo + hi);
    if let Some(sa) = split_residual(y, assignment, threshold, config, power) {
        return (sa, centroid(power, assignment).ok());
    }
    drift(y, power)
}

/// At a centroid where the farthest-first order swaps between one subcarrier
/// on each side, the minimal allocation shares the residual between both so
/// that the centroid stays put. Returns `None` when `y` is not such a point
/// or the shares leave `[0, P0]`; `power` is then unspecified.
fn split_residual(
    y: f64,
    assignment: &[bool],
    threshold: f64,
    config: &SystemConfig,
    power: &mut [f64],
) -> Option<SensingAllocation> {
    let p0 = config.per_subcarrier_cap_w;
    let mut order: Vec<(usize, f64)> = assignment
        .iter()
        .enumerate()
        .filter(|(_, &s)| s)
        .map(|(i, _)| (i, subcarrier_index(i) - y))
        .collect();
    order.sort_by(|a, b| (b.1 * b.1).partial_cmp(&(a.1 * a.1)).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));

    // the shared pair is the first pair of opposite, equidistant neighbours in
    // the order that cannot both be filled without overshooting
    let (mut spread, mut moment, mut used) = (0.0, 0.0, 0.0);
    let mut full = 0;
    loop {
        let (&(_, d1), &(_, d2)) = (order.get(full)?, order.get(full + 1)?);
        let paired = d1 * d2 < 0.0 && (d1.abs() - d2.abs()).abs() <= 1e-6 * d1.abs().max(1.0);
        if paired && spread + (d1 * d1 + d2 * d2) * p0 >= threshold {
            break;
        }
        if spread + d1 * d1 * p0 >= threshold {
            return None;
        }
        spread += d1 * d1 * p0;
        moment += d1 * p0;
        used += p0;
        full += 1;
    }
    let (i1, d1) = order[full];
    let (i2, d2) = order[full + 1];
    // p1 d1 + p2 d2 = −moment,  p1 d1² + p2 d2² = threshold − spread
    let (a, b, c, e) = (d1, d2, d1 * d1, d2 * d2);
    let det = a * e - b * c;
    if det == 0.0 {
        return None;
    }
    let (r1, r2) = (-moment, threshold - spread);
    let p1 = (r1 * e - b * r2) / det;
    let p2 = (a * r2 - c * r1) / det;
    let ok = |p: f64| (-1e-12..=p0 * (1.0 + 1e-12)).contains(&p);
    if !(ok(p1) && ok(p2)) {
        return None;
    }
    for (q, &(i, _)) in order.iter().enumerate() {
        power[i] = if q < full { p0 } else { 0.0 };
    }
    power[i1] = p1.clamp(0.0, p0);
    power[i2] = p2.clamp(0.0, p0);
    Some(SensingAllocation {
        q_bar: full + 2,
        feasible: true,
        power_used: used + power[i1] + power[i2],
    })
}

/// `∂L/∂um = −log2(1 + g Pm/σ²) + μ Pm (m − y)²` for 1-based index `m`.
pub fn assignment_gradient(
    index: f64,
    power: f64,
    gain: f64,
    centroid: f64,
    mu: f64,
    config: &SystemConfig,
) -> f64 {
    let d = index - centroid;
    -subcarrier_rate(gain, power, config.noise_power_w) + mu * power * d * d
}

/// Binary assignment from gradients: sensing iff `∂L/∂um ≥ −tie_epsilon`.
pub fn assign_from_gradients(gradients: &[f64], tie_epsilon: f64) -> Vec<bool> {
    gradients.iter().map(|&g| g >= -tie_epsilon).collect()
}

/// Assignment score of one subcarrier at the current prices: the best
/// Lagrangian contribution as a sensing subcarrier minus the best as a
/// communication subcarrier, each with its own power.
///
/// Scoring both roles at the power the subcarrier currently holds ranks
/// deep-faded subcarriers first regardless of where they sit in the band, and
/// a sensing subcarrier left without power would score exactly zero and stay
/// sensing forever. Such a subcarrier contributes nothing to sensing, so it
/// scores as a communication subcarrier.
fn assignment_score(index: f64, power: f64, sensing: bool, gain: f64, state: &OptimizerState, config: &SystemConfig) -> f64 {
    let lambda = state.lambda.max(f64::MIN_POSITIVE);
    let p_comm = water_filling_power(gain, lambda, config);
    let comm_value = subcarrier_rate(gain, p_comm, config.noise_power_w) - lambda * p_comm;
    if sensing && power <= 0.0 {
        return -comm_value;
    }
    let d = index - state.centroid;
    let sense_value = (state.mu * d * d - lambda).max(0.0) * config.per_subcarrier_cap_w;
    sense_value - comm_value
}

/// Closed-form assignment step for the current powers, centroid and duals.
pub fn assignment_update(
    state: &OptimizerState,
    channel: &ChannelResponse,
    config: &SystemConfig,
    opt: &OptimizerConfig,
) -> Vec<bool> {
    let gradients: Vec<f64> = state
        .waveform
        .power
        .iter()
        .zip(&state.waveform.assignment)
        .zip(channel.gains())
        .enumerate()
        .map(|(i, ((&p, &s), &g))| assignment_score(subcarrier_index(i), p, s, g, state, config))
        .collect();
    assign_from_gradients(&gradients, opt.tie_epsilon)
}

/// `Σ Pm um (m − y)²` for the current iterate.
pub fn sensing_spread(waveform: &Waveform, centroid: f64) -> f64 {
    waveform
        .power
        .iter()
        .zip(&waveform.assignment)
        .enumerate()
        .filter(|(_, (_, &s))| s)
        .map(|(i, (&p, _))| {
            let d = subcarrier_index(i) - centroid;
            p * d * d
        })
        .sum()
}

/// Projected subgradient steps on both duals.
pub fn dual_update(
    state: &OptimizerState,
    req: &SensingRequirement,
    config: &SystemConfig,
    eta_lambda: f64,
    eta_mu: f64,
) -> (f64, f64) {
    let budget_slack = state.waveform.total_power() - config.total_budget_w;
    let sensing_slack = req.binding - sensing_spread(&state.waveform, state.centroid);
    let lambda = (state.lambda + eta_lambda * budget_slack).max(0.0);
    let mu = (state.mu + eta_mu * sensing_slack).max(0.0);
    (lambda, mu)
}

/// Lagrangian of the relaxed problem at the given primal/dual point.
pub fn lagrangian(
    config: &SystemConfig,
    channel: &ChannelResponse,
    waveform: &Waveform,
    centroid: f64,
    lambda: f64,
    mu: f64,
    threshold: f64,
) -> f64 {
    cdr(config, channel, waveform) - lambda * (waveform.total_power() - config.total_budget_w)
        + mu * (sensing_spread(waveform, centroid) - threshold)
}

/// Initial assignment: `⌈fraction·M⌉` subcarriers, at least the two band
/// edges, alternately taken from the lower and upper band edges.
pub fn initial_assignment(num_subcarriers: usize, fraction: f64) -> Vec<bool> {
    let count = ((fraction * num_subcarriers as f64).ceil() as usize).clamp(2.min(num_subcarriers), num_subcarriers);
    let mut u = vec![false; num_subcarriers];
    let (mut lo, mut hi) = (0, num_subcarriers - 1);
    for k in 0..count {
        if k % 2 == 0 {
            u[lo] = true;
            lo += 1;
        } else {
            u[hi] = true;
            hi = hi.saturating_sub(1);
        }
    }
    u
}

/// Dual price at which a unit of sensing power on a band-edge subcarrier
/// pays for itself at the initial power price.
pub(crate) fn mu_reference(lambda0: f64, num_subcarriers: usize) -> f64 {
    let half = num_subcarriers as f64 / 2.0;
    lambda0 / (half * half)
}

/// Feasibility and quality of a waveform against the constraints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assessment {
    pub cdr: f64,
    pub effective_bandwidth: f64,
    pub total_power: f64,
    pub budget_feasible: bool,
    pub sensing_feasible: bool,
    pub violation: f64,
}

impl Assessment {
    pub fn feasible(&self) -> bool {
        self.budget_feasible && self.sensing_feasible
    }
}

/// Scores a waveform: box and budget constraints within `eps_feas·P_req`,
/// effective bandwidth at least `(1 − eps_feas)·threshold`.
pub fn assess(
    config: &SystemConfig,
    channel: &ChannelResponse,
    threshold: f64,
    eps_feas: f64,
    waveform: &Waveform,
) -> Assessment {
    let weights = waveform.assignment_weights();
    let w = squared_effective_bandwidth(&waveform.power, &weights);
    let total = waveform.total_power();
    let budget_feasible = waveform.satisfies_power_constraints(config, eps_feas);
    let sensing_feasible = threshold <= 0.0 || w >= threshold * (1.0 - eps_feas);
    let budget_excess = if config.total_budget_w > 0.0 {
        (total / config.total_budget_w - 1.0).max(0.0)
    } else {
        total
    };
    let sensing_deficit = if threshold > 0.0 {
        (1.0 - w / threshold).max(0.0)
    } else {
        0.0
    };
    Assessment {
        cdr: cdr(config, channel, waveform),
        effective_bandwidth: w,
        total_power: total,
        budget_feasible,
        sensing_feasible,
        violation: budget_excess + sensing_deficit,
    }
}

/// Tracks the best feasible (by CDR) or least-violating waveform.
#[derive(Debug, Default)]
pub(crate) struct BestTracker {
    best: Option<(Waveform, Assessment)>,
}

impl BestTracker {
    pub(crate) fn offer(&mut self, waveform: &Waveform, a: Assessment) {
        let better = match &self.best {
            None => true,
            Some((_, cur)) => match (a.feasible(), cur.feasible()) {
                (true, false) => true,
                (false, true) => false,
                (true, true) => a.cdr > cur.cdr,
                (false, false) => a.violation < cur.violation,
            },
        };
        if better {
            self.best = Some((waveform.clone(), a));
        }
    }

    pub(crate) fn into_inner(self) -> Option<(Waveform, Assessment)> {
        self.best
    }
}

/// Runs the BCD loop from the default initialization.
pub fn optimize(
    channel: &ChannelResponse,
    paths: &PathSet,
    config: &SystemConfig,
    opt: &OptimizerConfig,
) -> OptimizationResult {
    optimize_with_candidates(channel, paths, config, opt, &[])
}

/// Runs the BCD loop; `candidates` (e.g. solutions of a tighter neighbouring
/// problem) compete with the iterates for the returned best waveform.
pub fn optimize_with_candidates(
    channel: &ChannelResponse,
    paths: &PathSet,
    config: &SystemConfig,
    opt: &OptimizerConfig,
    candidates: &[Waveform],
) -> OptimizationResult {
    let req = sensing_requirement(config, paths);
    let u0 = initial_assignment(config.num_subcarriers, opt.init_sensing_fraction);
    run_bcd(channel, config, opt, &req, u0, false, candidates)
}

/// Power-only optimization for a fixed assignment (steps 1–3 and the `λ`
/// update; the assignment never changes).
pub fn optimize_power(
    channel: &ChannelResponse,
    paths: &PathSet,
    config: &SystemConfig,
    opt: &OptimizerConfig,
    assignment: Vec<bool>,
) -> OptimizationResult {
    let req = sensing_requirement(config, paths);
    run_bcd(channel, config, opt, &req, assignment, true, &[])
}

fn run_bcd(
    channel: &ChannelResponse,
    config: &SystemConfig,
    opt: &OptimizerConfig,
    req: &SensingRequirement,
    initial_u: Vec<bool>,
    freeze_assignment: bool,
    candidates: &[Waveform],
) -> OptimizationResult {
    let m_count = config.num_subcarriers;
    let threshold = req.binding;
    let mut best = BestTracker::default();
    for cand in candidates.iter().filter(|c| c.len() == m_count) {
        best.offer(cand, assess(config, channel, threshold, opt.eps_feas, cand));
    }

    if !(config.total_budget_w > 0.0) {
        let waveform = Waveform {
            assignment: vec![false; m_count],
            power: vec![0.0; m_count],
        };
        best.offer(&waveform, assess(config, channel, threshold, opt.eps_feas, &waveform));
        return finish(best, 0, Vec::new());
    }

    let all_comm = vec![false; m_count];
    let lambda0 = water_filling_lambda(channel, &all_comm, config.total_budget_w, config);
    let eta_lambda0 = lambda0 / config.total_budget_w;
    let eta_mu0 = if threshold > 0.0 {
        mu_reference(lambda0, m_count) / threshold
    } else {
        0.0
    };

    let band_centre = (m_count as f64 + 1.0) / 2.0;
    let mut u = initial_u;
    let initial_power = vec![config.per_subcarrier_cap_w; m_count];
    let mut state = OptimizerState {
        centroid: centroid(&initial_power, &u).unwrap_or(band_centre),
        waveform: Waveform {
            assignment: u.clone(),
            power: vec![0.0; m_count],
        },
        lambda: lambda0,
        mu: 0.0,
        iteration: 0,
        last_lagrangian: f64::NAN,
        budget_feasible: false,
        sensing_feasible: false,
    };

    let mut trace = Vec::with_capacity(opt.max_iterations.min(4096));
    let mut stalled = 0;
    let mut iterations = 0;
    let mut power = vec![0.0; m_count];
    let mut last_polished: Option<Vec<bool>> = None;
    for k in 1..=opt.max_iterations {
        iterations = k;
        power.iter_mut().for_each(|p| *p = 0.0);
        comm_power_update(channel, &u, state.lambda.max(f64::MIN_POSITIVE), config, &mut power)
            .expect("price is positive");
        balanced_sensing_power(&u, threshold, config, &mut power);

        state.waveform.assignment.clone_from(&u);
        state.waveform.power.clone_from(&power);
        // with no sensing power left the band centre is the neutral choice
        state.centroid = update_centroid(&state.waveform).unwrap_or(band_centre);
        state.iteration = k;

        let a = assess(config, channel, threshold, opt.eps_feas, &state.waveform);
        state.budget_feasible = a.budget_feasible;
        state.sensing_feasible = a.sensing_feasible;
        best.offer(&state.waveform, a);
        if a.sensing_feasible {
            let mask = if freeze_assignment {
                state.waveform.assignment.clone()
            } else {
                powered_sensing(&state.waveform)
            };
            if last_polished.as_ref() != Some(&mask) {
                if let Some(p) = polish(channel, config, &state.waveform.power, &mask) {
                    best.offer(&p, assess(config, channel, threshold, opt.eps_feas, &p));
                }
                last_polished = Some(mask);
            }
        }
        trace.push(IterationRecord {
            k,
            cdr: a.cdr,
            effective_bandwidth: a.effective_bandwidth,
            lambda: state.lambda,
            mu: state.mu,
            num_sensing: state.waveform.num_sensing(),
            feasible: a.feasible(),
        });

        let lag = a.cdr - state.lambda * (a.total_power - config.total_budget_w)
            + state.mu * (sensing_spread(&state.waveform, state.centroid) - threshold);
        let rel_change = (lag - state.last_lagrangian).abs() / lag.abs().max(1e-12);
        state.last_lagrangian = lag;

        if !freeze_assignment {
            u = assignment_update(&state, channel, config, opt);
        }
        let (lambda, mu) = dual_update(
            &state,
            req,
            config,
            opt.step_lambda.factor(k) * eta_lambda0,
            opt.step_mu.factor(k) * eta_mu0,
        );
        let duals_settled = (lambda - state.lambda).abs() <= opt.eps_lag * state.lambda.max(f64::MIN_POSITIVE)
            && (mu - state.mu).abs() <= opt.eps_lag * state.mu.max(f64::MIN_POSITIVE);
        state.lambda = lambda;
        state.mu = if freeze_assignment { 0.0 } else { mu };

        if rel_change < opt.eps_lag && u == state.waveform.assignment {
            stalled += 1;
        } else {
            stalled = 0;
        }
        if stalled >= opt.stall_iterations && (a.feasible() || duals_settled) {
            break;
        }
    }
    finish(best, iterations, trace)
}

fn powered_sensing(waveform: &Waveform) -> Vec<bool> {
    waveform.assignment.iter().zip(&waveform.power).map(|(&s, &p)| s && p > 0.0).collect()
}

/// Exact power block for the assignment `sensing`: sensing subcarriers keep
/// their powers and the communication price is set by bisection so the whole
/// remaining budget is spent. Passing only the powered sensing subcarriers
/// returns the unpowered ones to communication.
fn polish(channel: &ChannelResponse, config: &SystemConfig, power: &[f64], sensing: &[bool]) -> Option<Waveform> {
    let sensing_power: f64 = power.iter().zip(sensing).filter(|(_, &s)| s).map(|(p, _)| p).sum();
    let budget = config.total_budget_w - sensing_power;
    if budget < 0.0 {
        return None;
    }
    let lambda = water_filling_lambda(channel, sensing, budget, config);
    let mut polished: Vec<f64> = power.iter().zip(sensing).map(|(&p, &s)| if s { p } else { 0.0 }).collect();
    comm_power_update(channel, sensing, lambda, config, &mut polished).ok()?;
    Some(Waveform {
        assignment: sensing.to_vec(),
        power: polished,
    })
}

fn finish(best: BestTracker, iterations: usize, trace: Vec<IterationRecord>) -> OptimizationResult {
    let (waveform, a) = best.into_inner().expect("at least one iterate was assessed");
    OptimizationResult {
        waveform,
        achieved_cdr: a.cdr,
        achieved_effective_bandwidth: a.effective_bandwidth,
        feasible: a.feasible(),
        iterations_used: iterations,
        trace,
    }
}
