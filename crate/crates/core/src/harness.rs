//! Scenario generation and Monte Carlo experiment orchestration.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use rayon::prelude::*;

use crate::baselines::{rsapa, rsaupa, saupa, BaselineResult, DEFAULT_SENSING_FRACTION};
use crate::crb::{crb_from_bandwidth, range_error, squared_effective_bandwidth};
use crate::error::{IsacError, Result};
use crate::model::{channel_response, ChannelResponse, Path, PathSet, SystemConfig, Waveform, SPEED_OF_LIGHT};
use crate::optimizer::{optimize_with_candidates, OptimizerConfig};
use crate::receiver::{
    estimate_paths, random_data_symbols, simulate_rx, unit_pilots, DelayEstimator, DelayGrid, PathEstimate,
};

/// A configuration plus the ground-truth paths it was generated with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub config: SystemConfig,
    pub paths: PathSet,
    pub rng_seed: u64,
    pub label: String,
}

/// Simulation parameters of the reference setup: 1024 subcarriers at
/// 150 kHz, 16 receive antennas, 1 mW noise, 40 mW per-subcarrier cap.
pub fn default_config() -> SystemConfig {
    SystemConfig {
        num_subcarriers: 1024,
        subcarrier_spacing_hz: 150e3,
        num_rx_antennas: 16,
        noise_power_w: 1e-3,
        per_subcarrier_cap_w: 4e-2,
        total_budget_w: 10.0,
        delay_error_bound_s: 0.05 / SPEED_OF_LIGHT,
        carrier_frequency_hz: None,
        speed_of_light: SPEED_OF_LIGHT,
    }
}

pub const DEFAULT_NUM_PATHS: usize = 6;

/// Draws `num_paths` paths:
/// - delay uniform in `[0.05, 0.95]/Δf`,
/// - `|b|` log-uniform in `[0.1, 1]` with uniform phase,
/// - `cos ψ` uniform in `[−0.95, 0.95]`, redrawn until it is at least `2/N_r`
///   from every earlier path. If the directions drawn so far leave no room,
///   all directions are drawn again.
pub fn generate_paths<R: Rng + ?Sized>(config: &SystemConfig, num_paths: usize, rng: &mut R) -> Result<PathSet> {
    const SPAN: f64 = 0.95;
    let n_r = config.num_rx_antennas;
    let separation = 2.0 / n_r as f64;
    if num_paths == 0 || (num_paths - 1) as f64 * separation > 2.0 * SPAN {
        return Err(IsacError::InvalidPaths(format!(
            "cannot place {num_paths} separated paths on a {n_r}-element array"
        )));
    }
    let cosines = (0..1000)
        .find_map(|_| {
            let mut cosines: Vec<f64> = Vec::with_capacity(num_paths);
            for _ in 0..100 * num_paths {
                if cosines.len() == num_paths {
                    break;
                }
                let c = rng.random_range(-SPAN..SPAN);
                if cosines.iter().all(|&o| (o - c).abs() >= separation) {
                    cosines.push(c);
                }
            }
            (cosines.len() == num_paths).then_some(cosines)
        })
        .ok_or_else(|| IsacError::InvalidPaths(format!("could not place {num_paths} separated directions")))?;
    let max_delay = config.max_unambiguous_delay_s();
    let paths = cosines
        .into_iter()
        .map(|cos_aoa| {
            let delay = max_delay * rng.random_range(0.05..0.95);
            let magnitude = 10f64.powf(rng.random_range(-1.0..0.0));
            let phase = rng.random_range(0.0..2.0 * PI);
            Path::new(Complex64::from_polar(magnitude, phase), delay, cos_aoa.acos())
        })
        .collect();
    PathSet::new(paths, config)
}

/// Scenario with `num_paths` random paths on top of `config`.
pub fn scenario_from_config(config: SystemConfig, num_paths: usize, seed: u64) -> Result<Scenario> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let paths = generate_paths(&config, num_paths, &mut rng)?;
    Ok(Scenario {
        config,
        paths,
        rng_seed: seed,
        label: format!("seed-{seed}"),
    })
}

/// Reference scenario: [`default_config`] with six random paths.
pub fn default_scenario(seed: u64) -> Scenario {
    scenario_from_config(default_config(), DEFAULT_NUM_PATHS, seed).expect("default configuration is valid")
}

impl Scenario {
    pub fn channel(&self) -> ChannelResponse {
        channel_response(&self.config, &self.paths)
    }

    /// Configuration at one sweep point.
    pub fn config_at(&self, point: SweepPoint) -> SystemConfig {
        self.config
            .clone()
            .with_budget(point.budget_w)
            .with_range_error_bound(point.range_bound_m)
    }
}

/// Seed of the random baselines' sensing draw on one scenario; shared by
/// RSAPA and RSAUPA and by every sweep point.
pub fn assignment_seed(master: u64, scenario_index: usize) -> u64 {
    derive_seed(master, &[scenario_index as u64, 0xA110C])
}

/// Independent stream seed for a tuple of indices under a master seed.
pub fn derive_seed(master: u64, indices: &[u64]) -> u64 {
    // SplitMix64 finalizer applied along the index chain
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    };
    indices.iter().fold(mix(master), |acc, &i| mix(acc ^ mix(i)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Jpcde,
    Saupa,
    Rsapa,
    Rsaupa,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Jpcde, Method::Saupa, Method::Rsapa, Method::Rsaupa];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Jpcde => "JPCDE",
            Method::Saupa => "SAUPA",
            Method::Rsapa => "RSAPA",
            Method::Rsaupa => "RSAUPA",
        }
    }

    fn index(&self) -> u64 {
        *self as u64
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = IsacError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| IsacError::InvalidConfig(format!("unknown method {s:?}")))
    }
}

/// Grid of power budgets × range-error bounds, each point run for every
/// method on `num_scenarios` random scenarios with `trials` noise draws each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub budgets_w: Vec<f64>,
    pub range_bounds_m: Vec<f64>,
    pub methods: Vec<Method>,
    pub trials: usize,
    pub num_scenarios: usize,
    pub num_paths: usize,
    pub sensing_fraction: f64,
    pub aoa_grid_size: usize,
    pub delay_grid: DelayGrid,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            budgets_w: vec![6.0, 8.0, 10.0, 12.0, 14.0],
            range_bounds_m: vec![0.05],
            methods: Method::ALL.to_vec(),
            trials: 300,
            num_scenarios: 1,
            num_paths: DEFAULT_NUM_PATHS,
            sensing_fraction: DEFAULT_SENSING_FRACTION,
            aoa_grid_size: 1024,
            delay_grid: DelayGrid::default(),
        }
    }
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(IsacError::InvalidConfig(format!("sweep: {msg}")));
        if self.budgets_w.is_empty() || self.range_bounds_m.is_empty() || self.methods.is_empty() {
            return bad("budgets, range bounds and methods must be non-empty");
        }
        if !strictly_increasing(&self.budgets_w) || !strictly_increasing(&self.range_bounds_m) {
            return bad("sweep values must be strictly increasing");
        }
        if self.budgets_w.iter().any(|&b| !(b >= 0.0 && b.is_finite())) {
            return bad("budgets must be finite and nonnegative");
        }
        if self.range_bounds_m.iter().any(|&b| !(b > 0.0)) {
            return bad("range bounds must be positive");
        }
        if self.num_scenarios == 0 {
            return bad("num_scenarios must be at least 1");
        }
        if !(self.sensing_fraction > 0.0 && self.sensing_fraction < 1.0) {
            return bad("sensing_fraction must lie in (0, 1)");
        }
        if self.aoa_grid_size < 3 {
            return bad("aoa_grid_size must be at least 3");
        }
        Ok(())
    }

    /// Grid points, budget-major.
    pub fn points(&self) -> Vec<SweepPoint> {
        let mut points = Vec::with_capacity(self.budgets_w.len() * self.range_bounds_m.len());
        for (i, &budget_w) in self.budgets_w.iter().enumerate() {
            for (j, &range_bound_m) in self.range_bounds_m.iter().enumerate() {
                points.push(SweepPoint {
                    budget_index: i,
                    bound_index: j,
                    budget_w,
                    range_bound_m,
                });
            }
        }
        points
    }

    /// Name and value of the swept axis for a point: the range bound when it
    /// varies, the budget otherwise.
    pub fn axis(&self, point: SweepPoint) -> (&'static str, f64) {
        if self.range_bounds_m.len() > 1 || self.budgets_w.len() == 1 {
            ("range_bound_m", point.range_bound_m)
        } else {
            ("p_req_w", point.budget_w)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub budget_index: usize,
    pub bound_index: usize,
    pub budget_w: f64,
    pub range_bound_m: f64,
}

/// Waveform chosen by one method for one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub method: Method,
    pub waveform: Waveform,
    pub cdr: f64,
    pub effective_bandwidth: f64,
    pub feasible: bool,
    pub iterations: usize,
    pub rng_seed: Option<u64>,
}

/// Runs one method. `candidates` are extra starting waveforms for the
/// optimizer and are ignored by the baselines.
#[allow(clippy::too_many_arguments)]
pub fn allocate(
    method: Method,
    channel: &ChannelResponse,
    paths: &PathSet,
    config: &SystemConfig,
    opt: &OptimizerConfig,
    sensing_fraction: f64,
    seed: u64,
    candidates: &[Waveform],
) -> Result<Allocation> {
    let from_baseline = |r: BaselineResult| Allocation {
        method,
        waveform: r.waveform,
        cdr: r.cdr,
        effective_bandwidth: r.effective_bandwidth,
        feasible: r.feasible,
        iterations: 0,
        rng_seed: r.rng_seed,
    };
    Ok(match method {
        Method::Jpcde => {
            let r = optimize_with_candidates(channel, paths, config, opt, candidates);
            Allocation {
                method,
                waveform: r.waveform,
                cdr: r.achieved_cdr,
                effective_bandwidth: r.achieved_effective_bandwidth,
                feasible: r.feasible,
                iterations: r.iterations_used,
                rng_seed: None,
            }
        }
        Method::Saupa => from_baseline(saupa(channel, paths, config, opt)),
        Method::Rsapa => from_baseline(rsapa(channel, paths, config, opt, sensing_fraction, seed)?),
        Method::Rsaupa => from_baseline(rsaupa(channel, paths, config, opt, sensing_fraction, seed)?),
    })
}

/// Per-path estimation outcome of one trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub path: usize,
    pub tau_true_s: f64,
    pub tau_hat_s: f64,
    /// Delay error wrapped to `[−1/(2Δf), 1/(2Δf))`, times `c`.
    pub range_err_m: f64,
    pub b_err_abs: f64,
}

/// Outcome of a batch of trials; failed trials are counted, not recorded.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrialBatch {
    pub records: Vec<TrialRecord>,
    pub failures: usize,
}

/// Assigns each true path the nearest unused estimate in `cos ψ`.
fn match_paths(paths: &PathSet, estimates: &[PathEstimate]) -> Vec<Option<usize>> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (p, path) in paths.paths().iter().enumerate() {
        for (e, est) in estimates.iter().enumerate() {
            pairs.push(((path.aoa_rad.cos() - est.aoa_rad.cos()).abs(), p, e));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut by_path = vec![None; paths.len()];
    let mut used = vec![false; estimates.len()];
    for (_, p, e) in pairs {
        if by_path[p].is_none() && !used[e] {
            by_path[p] = Some(e);
            used[e] = true;
        }
    }
    by_path
}

fn wrapped_delay_error(tau_hat: f64, tau: f64, period: f64) -> f64 {
    let d = (tau_hat - tau).rem_euclid(period);
    if d >= period / 2.0 {
        d - period
    } else {
        d
    }
}

/// One noise realization through the full receive chain.
fn run_trial(
    scenario: &Scenario,
    channel: &ChannelResponse,
    waveform: &Waveform,
    estimator: &DelayEstimator,
    aoa_grid_size: usize,
    trial: usize,
    seed: u64,
) -> Result<Vec<TrialRecord>> {
    let config = &scenario.config;
    let m = config.num_subcarriers;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = random_data_symbols(m, &mut rng);
    let snapshot = simulate_rx(channel, waveform, &unit_pilots(m), &data, config, &mut rng)?;
    let estimates = estimate_paths(&snapshot, config, scenario.paths.len(), aoa_grid_size, estimator)?;
    let period = config.max_unambiguous_delay_s();
    Ok(match_paths(&scenario.paths, &estimates)
        .into_iter()
        .enumerate()
        .filter_map(|(p, e)| e.map(|e| (p, estimates[e])))
        .map(|(p, est)| {
            let truth = scenario.paths.paths()[p];
            TrialRecord {
                trial,
                path: p,
                tau_true_s: truth.delay_s,
                tau_hat_s: est.delay_s,
                range_err_m: config.speed_of_light * wrapped_delay_error(est.delay_s, truth.delay_s, period),
                b_err_abs: (est.coefficient - truth.coefficient).norm(),
            }
        })
        .collect())
}

/// Runs `trials` independent noise realizations in parallel. Trial `t` draws
/// from `derive_seed(seed, [t])`, so results do not depend on thread count.
pub fn run_trials(
    scenario: &Scenario,
    waveform: &Waveform,
    trials: usize,
    seed: u64,
    aoa_grid_size: usize,
    delay_grid: DelayGrid,
) -> Result<TrialBatch> {
    if waveform.len() != scenario.config.num_subcarriers {
        return Err(IsacError::InvalidWaveform(format!(
            "waveform has {} subcarriers, scenario has {}",
            waveform.len(),
            scenario.config.num_subcarriers
        )));
    }
    if waveform.num_powered_sensing() < 2 {
        return Err(IsacError::InfeasibleSensing);
    }
    let channel = scenario.channel();
    let estimator = DelayEstimator::new(&scenario.config, delay_grid)?;
    let outcomes: Vec<Result<Vec<TrialRecord>>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            run_trial(
                scenario,
                &channel,
                waveform,
                &estimator,
                aoa_grid_size,
                t,
                derive_seed(seed, &[t as u64]),
            )
        })
        .collect();
    let mut batch = TrialBatch::default();
    for outcome in outcomes {
        match outcome {
            Ok(records) => batch.records.extend(records),
            Err(e) => {
                log::debug!("trial failed: {e}");
                batch.failures += 1;
            }
        }
    }
    Ok(batch)
}

/// Aggregate over scenarios and trials for one (method, point).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: Method,
    pub sweep_param: String,
    pub sweep_value: f64,
    pub budget_w: f64,
    pub range_bound_m: f64,
    /// Mean CDR over feasible scenarios (NaN when none is feasible).
    pub mean_cdr: f64,
    pub cdr_std_err: f64,
    /// Mean over feasible scenarios of the worst-path `c·√CRB`.
    pub crb_range_m: f64,
    /// `c·√(mean over paths of CRB)`, the bound matching `rmse_range_m`.
    pub crb_range_rms_m: f64,
    /// `c·√(mean over paths and trials of delay error²)`; NaN without trials.
    pub rmse_range_m: f64,
    /// Largest per-path RMSE.
    pub rmse_range_worst_m: f64,
    pub feasibility_rate: f64,
    pub n_sensing_mean: f64,
    pub trials: usize,
    pub estimation_failures: usize,
    /// Per-scenario error annotations (e.g. an infeasible random draw).
    pub errors: Vec<String>,
}

/// Outcome of one method on one scenario at one point.
#[derive(Debug, Clone)]
struct Cell {
    allocation: Option<Allocation>,
    crb_range_m: f64,
    crb_range_rms_m: f64,
    batch: TrialBatch,
    error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub spec: SweepSpec,
    pub rows: Vec<AggregateRow>,
    /// Waveform of each (method, point) on the first scenario, in row order.
    pub waveforms: Vec<Option<Waveform>>,
}

/// Worst-path and path-RMS `c·√CRB` of a waveform.
pub fn crb_ranges(config: &SystemConfig, paths: &PathSet, waveform: &Waveform) -> (f64, f64) {
    let w = squared_effective_bandwidth(&waveform.power, &waveform.assignment_weights());
    let crbs: Vec<f64> = paths
        .paths()
        .iter()
        .map(|p| crb_from_bandwidth(config, p, w).unwrap_or(f64::INFINITY))
        .collect();
    let worst = crbs.iter().copied().fold(0.0, f64::max);
    let mean = crbs.iter().sum::<f64>() / crbs.len().max(1) as f64;
    (
        range_error(worst, config.speed_of_light),
        range_error(mean, config.speed_of_light),
    )
}

/// Allocations for every point of one scenario and method. The optimizer is
/// run along anti-diagonals of the grid so that each point can start from
/// the solutions of its neighbours with a smaller budget or a tighter bound,
/// which remain feasible at the current point.
fn allocate_grid(
    spec: &SweepSpec,
    scenario: &Scenario,
    channel: &ChannelResponse,
    method: Method,
    opt: &OptimizerConfig,
    scenario_index: usize,
    master_seed: u64,
) -> Vec<Result<Allocation>> {
    let points = spec.points();
    let nb = spec.range_bounds_m.len();
    let mut out: Vec<Option<Result<Allocation>>> = vec![None; points.len()];
    let max_diag = spec.budgets_w.len() + nb - 2;
    for d in 0..=max_diag {
        let idx: Vec<usize> = (0..points.len())
            .filter(|&k| points[k].budget_index + points[k].bound_index == d)
            .collect();
        let results: Vec<(usize, Result<Allocation>)> = idx
            .par_iter()
            .map(|&k| {
                let point = points[k];
                let config = scenario.config_at(point);
                let mut candidates = Vec::new();
                if method == Method::Jpcde {
                    let neighbours = [
                        point.budget_index.checked_sub(1).map(|i| i * nb + point.bound_index),
                        point.bound_index.checked_sub(1).map(|j| point.budget_index * nb + j),
                    ];
                    for n in neighbours.into_iter().flatten() {
                        if let Some(Ok(a)) = &out[n] {
                            if a.feasible {
                                candidates.push(a.waveform.clone());
                            }
                        }
                    }
                }
                let seed = assignment_seed(master_seed, scenario_index);
                let r = allocate(
                    method,
                    channel,
                    &scenario.paths,
                    &config,
                    opt,
                    spec.sensing_fraction,
                    seed,
                    &candidates,
                );
                (k, r)
            })
            .collect();
        for (k, r) in results {
            out[k] = Some(r);
        }
    }
    out.into_iter().map(|r| r.expect("every point visited")).collect()
}

/// Runs the full sweep: allocation per (scenario, method, point), then
/// `trials` receive-chain realizations per feasible allocation.
///
/// Scenario `s` is `scenario_from_config(base, num_paths, derive_seed(seed, [s]))`.
/// Rows are ordered method-major in `spec.methods` order, then by point.
pub fn run_sweep(spec: &SweepSpec, base: &SystemConfig, opt: &OptimizerConfig, seed: u64) -> Result<SweepResult> {
    spec.validate()?;
    opt.validate()?;
    base.validate()?;
    let points = spec.points();
    let scenarios: Vec<Scenario> = (0..spec.num_scenarios)
        .map(|s| scenario_from_config(base.clone(), spec.num_paths, derive_seed(seed, &[s as u64])))
        .collect::<Result<_>>()?;

    // cells[method][point][scenario]
    let mut cells: Vec<Vec<Vec<Cell>>> = Vec::with_capacity(spec.methods.len());
    for &method in &spec.methods {
        let mut per_point: Vec<Vec<Cell>> = vec![Vec::with_capacity(scenarios.len()); points.len()];
        for (s, scenario) in scenarios.iter().enumerate() {
            let channel = scenario.channel();
            let allocations = allocate_grid(spec, scenario, &channel, method, opt, s, seed);
            let evaluated: Vec<Cell> = allocations
                .into_par_iter()
                .enumerate()
                .map(|(k, a)| {
                    let point = points[k];
                    let mut config_scenario = scenario.clone();
                    config_scenario.config = scenario.config_at(point);
                    match a {
                        Err(e) => Cell {
                            allocation: None,
                            crb_range_m: f64::NAN,
                            crb_range_rms_m: f64::NAN,
                            batch: TrialBatch::default(),
                            error: Some(e.to_string()),
                        },
                        Ok(a) => {
                            let (crb_range_m, crb_range_rms_m) =
                                crb_ranges(&config_scenario.config, &scenario.paths, &a.waveform);
                            let mut error = None;
                            let batch = if a.feasible && spec.trials > 0 {
                                let trial_seed = derive_seed(seed, &[s as u64, k as u64, method.index()]);
                                match run_trials(
                                    &config_scenario,
                                    &a.waveform,
                                    spec.trials,
                                    trial_seed,
                                    spec.aoa_grid_size,
                                    spec.delay_grid,
                                ) {
                                    Ok(b) => b,
                                    Err(e) => {
                                        error = Some(e.to_string());
                                        TrialBatch::default()
                                    }
                                }
                            } else {
                                TrialBatch::default()
                            };
                            Cell {
                                allocation: Some(a),
                                crb_range_m,
                                crb_range_rms_m,
                                batch,
                                error,
                            }
                        }
                    }
                })
                .collect();
            for (k, cell) in evaluated.into_iter().enumerate() {
                per_point[k].push(cell);
            }
        }
        cells.push(per_point);
    }

    let mut rows = Vec::new();
    let mut waveforms = Vec::new();
    for (mi, &method) in spec.methods.iter().enumerate() {
        for (k, &point) in points.iter().enumerate() {
            let point_cells = &cells[mi][k];
            rows.push(aggregate(spec, method, point, point_cells));
            waveforms.push(point_cells[0].allocation.as_ref().map(|a| a.waveform.clone()));
        }
    }
    Ok(SweepResult {
        spec: spec.clone(),
        rows,
        waveforms,
    })
}

fn aggregate(spec: &SweepSpec, method: Method, point: SweepPoint, cells: &[Cell]) -> AggregateRow {
    let feasible: Vec<&Cell> = cells
        .iter()
        .filter(|c| c.allocation.as_ref().is_some_and(|a| a.feasible))
        .collect();
    let n = feasible.len() as f64;
    let cdrs: Vec<f64> = feasible.iter().map(|c| c.allocation.as_ref().map_or(0.0, |a| a.cdr)).collect();
    let mean = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
    let mean_cdr = mean(&cdrs);
    let cdr_std_err = if cdrs.len() > 1 {
        let var = cdrs.iter().map(|x| (x - mean_cdr).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    let crb: Vec<f64> = feasible.iter().map(|c| c.crb_range_m).collect();
    let crb_rms: Vec<f64> = feasible.iter().map(|c| c.crb_range_rms_m).collect();
    let sensing: Vec<f64> = feasible
        .iter()
        .map(|c| c.allocation.as_ref().map_or(0.0, |a| a.waveform.num_sensing() as f64))
        .collect();

    let records: Vec<&TrialRecord> = feasible.iter().flat_map(|c| c.batch.records.iter()).collect();
    let rmse_range_m = if records.is_empty() {
        f64::NAN
    } else {
        (records.iter().map(|r| r.range_err_m.powi(2)).sum::<f64>() / records.len() as f64).sqrt()
    };
    let mut per_path: Vec<(f64, usize)> = vec![(0.0, 0); spec.num_paths];
    for r in &records {
        if let Some(slot) = per_path.get_mut(r.path) {
            slot.0 += r.range_err_m.powi(2);
            slot.1 += 1;
        }
    }
    let rmse_range_worst_m = per_path
        .iter()
        .filter(|(_, c)| *c > 0)
        .map(|(s, c)| (s / *c as f64).sqrt())
        .fold(f64::NAN, f64::max);

    let (sweep_param, sweep_value) = spec.axis(point);
    AggregateRow {
        method,
        sweep_param: sweep_param.to_string(),
        sweep_value,
        budget_w: point.budget_w,
        range_bound_m: point.range_bound_m,
        mean_cdr,
        cdr_std_err,
        crb_range_m: mean(&crb),
        crb_range_rms_m: mean(&crb_rms),
        rmse_range_m,
        rmse_range_worst_m,
        feasibility_rate: n / cells.len() as f64,
        n_sensing_mean: mean(&sensing),
        trials: if feasible.is_empty() { 0 } else { spec.trials },
        estimation_failures: feasible.iter().map(|c| c.batch.failures).sum(),
        errors: cells.iter().filter_map(|c| c.error.clone()).collect(),
    }
}

/// Methods ranked by CDR at one point, with violations of the expected order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointComparison {
    pub budget_w: f64,
    pub range_bound_m: f64,
    /// Feasible methods, best CDR first.
    pub ranking: Vec<(Method, f64)>,
    pub violations: Vec<String>,
}

/// Expected partial order: the optimizer beats every baseline, and each
/// single-block baseline beats the fully random one.
const EXPECTED_ORDER: [(Method, Method); 4] = [
    (Method::Jpcde, Method::Saupa),
    (Method::Jpcde, Method::Rsapa),
    (Method::Saupa, Method::Rsaupa),
    (Method::Rsapa, Method::Rsaupa),
];

pub fn compare_methods(rows: &[AggregateRow]) -> Vec<PointComparison> {
    let mut keys: Vec<(f64, f64)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|&(b, j)| b == r.budget_w && j == r.range_bound_m) {
            keys.push((r.budget_w, r.range_bound_m));
        }
    }
    keys.into_iter()
        .map(|(budget_w, range_bound_m)| {
            let mut ranking: Vec<(Method, f64)> = rows
                .iter()
                .filter(|r| r.budget_w == budget_w && r.range_bound_m == range_bound_m)
                .filter(|r| r.feasibility_rate > 0.0 && r.mean_cdr.is_finite())
                .map(|r| (r.method, r.mean_cdr))
                .collect();
            ranking.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            let cdr_of = |m: Method| ranking.iter().find(|(k, _)| *k == m).map(|x| x.1);
            let violations = EXPECTED_ORDER
                .iter()
                .filter_map(|&(hi, lo)| match (cdr_of(hi), cdr_of(lo)) {
                    (Some(a), Some(b)) if a < b => Some(format!("{hi} ({a:.3}) below {lo} ({b:.3})")),
                    _ => None,
                })
                .collect();
            PointComparison {
                budget_w,
                range_bound_m,
                ranking,
                violations,
            }
        })
        .collect()
}
