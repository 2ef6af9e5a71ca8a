use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use isac_core::crb::{crb_from_bandwidth, range_error, sensing_requirement};
use isac_core::harness::{
    allocate, assignment_seed, compare_methods, derive_seed, run_sweep, run_trials, scenario_from_config, AggregateRow, Method,
    PointComparison, Scenario,
};
use isac_core::optimizer::optimize;
use serde::Serialize;

use crate::config::RunConfig;
use crate::output::{self, num, sha256_hex, Manifest};

/// Outcome class mapped to the process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Feasible,
    Infeasible,
}

/// Everything a command needs besides its own arguments.
pub struct RunContext {
    pub config: RunConfig,
    pub config_path: Option<PathBuf>,
    pub config_bytes: Option<Vec<u8>>,
    pub out_dir: PathBuf,
}

impl RunContext {
    fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn write_manifest(&self, command: &str, extra_inputs: Vec<(PathBuf, String)>) -> Result<()> {
        std::fs::create_dir_all(&self.out_dir)
            .with_context(|| format!("cannot create output directory {}", self.out_dir.display()))?;
        let canonical = serde_json::to_vec(&self.config)?;
        let manifest = Manifest {
            tool: "isac",
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed: self.config.seed,
            threads: rayon::current_num_threads(),
            config_path: self.config_path.clone(),
            config_sha256: self.config_bytes.as_deref().map(sha256_hex),
            resolved_config_sha256: sha256_hex(&canonical),
            resolved_config: &self.config,
            extra_inputs,
        };
        output::write_json(&self.out("manifest.json"), &manifest)
    }

    /// Scenario 0 of the run seed, the same one a sweep starts with.
    fn scenario(&self) -> Result<Scenario> {
        let system = self.config.system()?;
        Ok(scenario_from_config(system, self.config.num_paths(), derive_seed(self.config.seed, &[0]))?)
    }
}

#[derive(Debug, Serialize)]
struct PathSummary {
    index: usize,
    delay_s: f64,
    aoa_rad: f64,
    coefficient_abs: f64,
    crb_delay_s2: f64,
    crb_range_m: f64,
}

#[derive(Debug, Serialize)]
struct OptimizeSummary {
    method: Method,
    feasible: bool,
    cdr_bps_hz: f64,
    effective_bandwidth: f64,
    required_effective_bandwidth: f64,
    total_power_w: f64,
    p_req_w: f64,
    range_bound_m: f64,
    worst_crb_range_m: f64,
    iterations: usize,
    num_sensing: usize,
    num_powered_sensing: usize,
    rng_seed: Option<u64>,
    paths: Vec<PathSummary>,
}

pub fn optimize_cmd(ctx: &RunContext, method: Method) -> Result<Outcome> {
    ctx.write_manifest("optimize", vec![])?;
    let scenario = ctx.scenario()?;
    let config = &scenario.config;
    let channel = scenario.channel();
    let opt = &ctx.config.optimizer;
    log::info!(
        "{method}: M = {}, P_req = {} W, range bound = {} m",
        config.num_subcarriers,
        config.total_budget_w,
        config.delay_error_bound_s * config.speed_of_light
    );

    let (allocation, trace) = if method == Method::Jpcde {
        let r = optimize(&channel, &scenario.paths, config, opt);
        let a = isac_core::harness::Allocation {
            method,
            waveform: r.waveform,
            cdr: r.achieved_cdr,
            effective_bandwidth: r.achieved_effective_bandwidth,
            feasible: r.feasible,
            iterations: r.iterations_used,
            rng_seed: None,
        };
        (a, r.trace)
    } else {
        let seed = assignment_seed(ctx.config.seed, 0);
        let a = allocate(method, &channel, &scenario.paths, config, opt, ctx.config.sweep.sensing_fraction, seed, &[])?;
        (a, vec![])
    };

    let req = sensing_requirement(config, &scenario.paths);
    let paths: Vec<PathSummary> = scenario
        .paths
        .paths()
        .iter()
        .enumerate()
        .map(|(index, p)| {
            let crb = crb_from_bandwidth(config, p, allocation.effective_bandwidth).unwrap_or(f64::INFINITY);
            PathSummary {
                index,
                delay_s: p.delay_s,
                aoa_rad: p.aoa_rad,
                coefficient_abs: p.coefficient.norm(),
                crb_delay_s2: crb,
                crb_range_m: range_error(crb, config.speed_of_light),
            }
        })
        .collect();
    let summary = OptimizeSummary {
        method,
        feasible: allocation.feasible,
        cdr_bps_hz: allocation.cdr,
        effective_bandwidth: allocation.effective_bandwidth,
        required_effective_bandwidth: req.binding,
        total_power_w: allocation.waveform.total_power(),
        p_req_w: config.total_budget_w,
        range_bound_m: config.delay_error_bound_s * config.speed_of_light,
        worst_crb_range_m: paths.iter().map(|p| p.crb_range_m).fold(0.0, f64::max),
        iterations: allocation.iterations,
        num_sensing: allocation.waveform.num_sensing(),
        num_powered_sensing: allocation.waveform.num_powered_sensing(),
        rng_seed: allocation.rng_seed,
        paths,
    };
    output::write_waveform(&ctx.out("waveform.csv"), &allocation.waveform, &channel)?;
    output::write_trace(&ctx.out("trace.csv"), &trace)?;
    output::write_json(&ctx.out("summary.json"), &summary)?;
    log::info!(
        "CDR {} bit/s/Hz, worst CRB range {} m, {} sensing subcarriers, feasible: {}",
        num(summary.cdr_bps_hz),
        num(summary.worst_crb_range_m),
        summary.num_sensing,
        summary.feasible
    );
    Ok(if allocation.feasible { Outcome::Feasible } else { Outcome::Infeasible })
}

#[derive(Debug, Serialize)]
struct EstimateSummary {
    trials: usize,
    failures: usize,
    records: usize,
    rmse_range_m: f64,
    crb_range_rms_m: f64,
    worst_crb_range_m: f64,
}

pub fn estimate_cmd(ctx: &RunContext, waveform_path: &Path) -> Result<Outcome> {
    let waveform_bytes =
        std::fs::read(waveform_path).with_context(|| format!("cannot read waveform {}", waveform_path.display()))?;
    ctx.write_manifest("estimate", vec![(waveform_path.to_path_buf(), sha256_hex(&waveform_bytes))])?;
    let waveform = output::read_waveform(waveform_path)?;
    let scenario = ctx.scenario()?;
    if waveform.len() != scenario.config.num_subcarriers {
        anyhow::bail!(
            "waveform has {} subcarriers, scenario has {}",
            waveform.len(),
            scenario.config.num_subcarriers
        );
    }
    if waveform.num_powered_sensing() < 2 {
        log::error!("waveform has fewer than 2 powered sensing subcarriers; delays are not identifiable");
        return Ok(Outcome::Infeasible);
    }
    let sweep = &ctx.config.sweep;
    let batch = run_trials(
        &scenario,
        &waveform,
        sweep.trials,
        derive_seed(ctx.config.seed, &[u64::MAX]),
        sweep.aoa_grid_size,
        sweep.delay_grid,
    )?;
    output::write_trials(&ctx.out("trials.csv"), &batch.records)?;
    let (worst, rms) = isac_core::harness::crb_ranges(&scenario.config, &scenario.paths, &waveform);
    let rmse = if batch.records.is_empty() {
        f64::NAN
    } else {
        (batch.records.iter().map(|r| r.range_err_m.powi(2)).sum::<f64>() / batch.records.len() as f64).sqrt()
    };
    let summary = EstimateSummary {
        trials: sweep.trials,
        failures: batch.failures,
        records: batch.records.len(),
        rmse_range_m: rmse,
        crb_range_rms_m: rms,
        worst_crb_range_m: worst,
    };
    output::write_json(&ctx.out("estimate_summary.json"), &summary)?;
    log::info!(
        "{} trials, {} failed, range RMSE {} m against CRB {} m",
        summary.trials,
        summary.failures,
        num(rmse),
        num(rms)
    );
    Ok(Outcome::Feasible)
}

fn run_and_write_sweep(ctx: &RunContext) -> Result<Vec<AggregateRow>> {
    let system = ctx.config.system()?;
    let result = run_sweep(&ctx.config.sweep, &system, &ctx.config.optimizer, ctx.config.seed)?;
    output::write_aggregate(&ctx.out("aggregate.csv"), &result.rows)?;
    output::write_fig3(&ctx.out("fig3_data.csv"), &result.rows)?;
    output::write_fig4(&ctx.out("fig4_data.csv"), &result.rows)?;
    for row in &result.rows {
        log::info!(
            "{:<6} P_req {:>5} W bound {:>6} m: CDR {} CRB {} m RMSE {} m feasible {}",
            row.method.name(),
            row.budget_w,
            row.range_bound_m,
            num(row.mean_cdr),
            num(row.crb_range_m),
            num(row.rmse_range_m),
            row.feasibility_rate
        );
        for e in &row.errors {
            log::warn!("{} at P_req {} W, bound {} m: {e}", row.method, row.budget_w, row.range_bound_m);
        }
    }
    Ok(result.rows)
}

pub fn sweep_cmd(ctx: &RunContext) -> Result<Outcome> {
    ctx.write_manifest("sweep", vec![])?;
    let rows = run_and_write_sweep(ctx)?;
    Ok(if rows.iter().any(|r| r.feasibility_rate == 0.0) {
        Outcome::Infeasible
    } else {
        Outcome::Feasible
    })
}

fn report(comparisons: &[PointComparison]) {
    for c in comparisons {
        let ranking: Vec<String> = c.ranking.iter().map(|(m, cdr)| format!("{m} {cdr:.3}")).collect();
        log::info!("P_req {} W, bound {} m: {}", c.budget_w, c.range_bound_m, ranking.join(" > "));
        for v in &c.violations {
            log::warn!("P_req {} W, bound {} m: {v}", c.budget_w, c.range_bound_m);
        }
    }
}

/// Ranks methods per sweep point, either from an existing aggregate CSV or
/// by running the configured sweep first.
pub fn compare_cmd(ctx: &RunContext, aggregate: Option<&Path>) -> Result<Outcome> {
    let extra = match aggregate {
        Some(p) => {
            let bytes = std::fs::read(p).with_context(|| format!("cannot read {}", p.display()))?;
            vec![(p.to_path_buf(), sha256_hex(&bytes))]
        }
        None => vec![],
    };
    ctx.write_manifest("compare", extra)?;
    let rows = match aggregate {
        Some(p) => output::read_aggregate(p)?
            .into_iter()
            .map(|r| {
                let method: Method = r.method.parse()?;
                Ok(AggregateRow {
                    method,
                    sweep_param: String::new(),
                    sweep_value: f64::NAN,
                    budget_w: r.p_req_w,
                    range_bound_m: r.range_bound_m,
                    mean_cdr: r.mean_cdr_bps_hz.unwrap_or(f64::NAN),
                    cdr_std_err: f64::NAN,
                    crb_range_m: f64::NAN,
                    crb_range_rms_m: f64::NAN,
                    rmse_range_m: f64::NAN,
                    rmse_range_worst_m: f64::NAN,
                    feasibility_rate: r.feasibility_rate,
                    n_sensing_mean: f64::NAN,
                    trials: 0,
                    estimation_failures: 0,
                    errors: vec![],
                })
            })
            .collect::<Result<Vec<_>>>()?,
        None => run_and_write_sweep(ctx)?,
    };
    let comparisons = compare_methods(&rows);
    output::write_comparison(&ctx.out("comparison.csv"), &comparisons)?;
    report(&comparisons);
    Ok(Outcome::Feasible)
}
