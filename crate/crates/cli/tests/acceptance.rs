//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Tolerances are pinned here and nowhere else.

// `!(x > 0.0)` is meant: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::f64::consts::PI;
use std::path::Path as FsPath;
use std::process::Command;
use std::time::{Duration, Instant};

use common::{min_sensing_power, small_scenario, water_filled_rate};
use isac_core::crb::{crb_delay, fim, sensing_requirement};
use isac_core::harness::{
    allocate, compare_methods, crb_ranges, default_config, default_scenario, run_sweep, run_trials, scenario_from_config,
    Method, SweepSpec,
};
use isac_core::model::channel_response;
use isac_core::optimizer::{optimize, update_centroid, OptimizerConfig};
use isac_core::{Path, SystemConfig, Waveform};
use nalgebra::Matrix3;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Criterion = (&'static str, fn() -> Verdict);

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn unit_config(m: usize, n_r: usize, noise: f64) -> SystemConfig {
    SystemConfig {
        num_subcarriers: m,
        subcarrier_spacing_hz: 1.0,
        num_rx_antennas: n_r,
        noise_power_w: noise,
        per_subcarrier_cap_w: 10.0,
        total_budget_w: 5.0 * m as f64,
        delay_error_bound_s: 0.01,
        carrier_frequency_hz: None,
        speed_of_light: 3e8,
    }
}

/// Random powers and a random assignment with both band edges sensing.
fn random_instance(rng: &mut ChaCha8Rng, m: usize) -> (Vec<f64>, Vec<f64>) {
    let power: Vec<f64> = (0..m).map(|_| rng.random_range(0.01..2.0)).collect();
    let mut u: Vec<f64> = (0..m).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
    let a = rng.random_range(0..m);
    let b = (a + rng.random_range(1..m)) % m;
    u[a] = 1.0;
    u[b] = 1.0;
    (power, u)
}

fn crb_vs_fim_inversion() -> Verdict {
    const TOL: f64 = 1e-8;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let m = rng.random_range(4..=64);
        let config = SystemConfig {
            subcarrier_spacing_hz: rng.random_range(1.0..2e5),
            ..unit_config(m, rng.random_range(1..32), rng.random_range(1e-4..1.0))
        };
        let (power, u) = random_instance(&mut rng, m);
        let b = Complex64::from_polar(rng.random_range(0.05..2.0), rng.random_range(-PI..PI));
        let path = Path::new(b, 0.0, 1.0);
        let f = fim(&config, &path, &power, &u);
        let Some(inv) = Matrix3::from_fn(|i, j| f.get(i, j)).try_inverse() else {
            return verdict(false, "singular FIM".into());
        };
        let crb = crb_delay(&config, &path, &power, &u).unwrap();
        worst = worst.max((crb - inv[(0, 0)]).abs() / inv[(0, 0)]);
    }
    let t = secs(start.elapsed());
    verdict(
        worst <= TOL && t < 1.0,
        format!("100 instances, max rel err {worst:.2e} (tol {TOL:.0e}), {t:.3} s (limit 1 s)"),
    )
}

/// Log-likelihood up to a constant, written out directly from the signal model.
fn log_likelihood(config: &SystemConfig, power: &[f64], u: &[f64], y: &[Complex64], theta: [f64; 3]) -> f64 {
    let b = Complex64::new(theta[1], theta[2]);
    let n_r = config.num_rx_antennas as f64;
    let residual: f64 = (0..power.len())
        .map(|i| {
            let m = (i + 1) as f64;
            let mean = (power[i] * n_r).sqrt()
                * b
                * Complex64::from_polar(1.0, -2.0 * PI * m * config.subcarrier_spacing_hz * theta[0]);
            u[i] * (y[i] - mean).norm_sqr()
        })
        .sum();
    -residual / config.noise_power_w
}

fn fim_vs_numeric_hessian() -> Verdict {
    const TOL: f64 = 1e-4;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let m = rng.random_range(4..=16);
        let config = unit_config(m, rng.random_range(1..8), rng.random_range(0.1..1.0));
        let (power, u) = random_instance(&mut rng, m);
        let b = Complex64::from_polar(rng.random_range(0.2..1.5), rng.random_range(-PI..PI));
        let tau = rng.random_range(0.0..1.0);
        let theta = [tau, b.re, b.im];
        let n_r = config.num_rx_antennas as f64;
        // noiseless data: the Hessian at the truth is exactly −FIM
        let y: Vec<Complex64> = (0..m)
            .map(|i| (power[i] * n_r).sqrt() * b * Complex64::from_polar(1.0, -2.0 * PI * (i + 1) as f64 * tau))
            .collect();
        let h = [1e-5, 1e-4, 1e-4];
        let f = fim(&config, &Path::new(b, tau, 1.0), &power, &u);
        for i in 0..3 {
            for j in 0..3 {
                let at = |si: f64, sj: f64| {
                    let mut t = theta;
                    t[i] += si * h[i];
                    t[j] += sj * h[j];
                    log_likelihood(&config, &power, &u, &y, t)
                };
                let hess = (at(1.0, 1.0) - at(1.0, -1.0) - at(-1.0, 1.0) + at(-1.0, -1.0)) / (4.0 * h[i] * h[j]);
                // structural zeros make a plain relative error meaningless
                let scale = (f.get(i, i) * f.get(j, j)).sqrt();
                worst = worst.max((-hess - f.get(i, j)).abs() / scale);
            }
        }
    }
    let t = secs(start.elapsed());
    verdict(
        worst <= TOL && t < 5.0,
        format!("20 instances, max scaled err {worst:.2e} (tol {TOL:.0e}), {t:.3} s (limit 5 s)"),
    )
}

fn quadratic_transform_identity() -> Verdict {
    const TOL: f64 = 1e-6;
    const GRID: usize = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst: f64 = 0.0;
    let mut worst_offset: f64 = 0.0;
    for _ in 0..50 {
        let m = rng.random_range(4..=64);
        let (power, u) = random_instance(&mut rng, m);
        let power: Vec<f64> = power.iter().zip(&u).map(|(p, s)| p * s).collect();
        let s0: f64 = power.iter().sum();
        let s1: f64 = power.iter().enumerate().map(|(i, p)| p * (i + 1) as f64).sum();
        let fractional = s1 * s1 / s0;
        let lo = (u.iter().position(|&s| s > 0.0).unwrap() + 1) as f64;
        let hi = (u.iter().rposition(|&s| s > 0.0).unwrap() + 1) as f64;
        let step = (hi - lo) / (GRID - 1) as f64;
        let (best_y, best) = (0..GRID)
            .map(|k| {
                let y = lo + k as f64 * step;
                (y, 2.0 * y * s1 - y * y * s0)
            })
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        let waveform = Waveform::new(u.iter().map(|&s| s > 0.0).collect(), power.clone()).unwrap();
        let y_star = update_centroid(&waveform).unwrap();
        worst = worst.max((best - fractional).abs() / fractional);
        worst_offset = worst_offset.max((best_y - y_star).abs() / step);
    }
    verdict(
        worst <= TOL && worst_offset <= 1.0,
        format!("50 configurations, max rel gap {worst:.2e} (tol {TOL:.0e}), argmax within {worst_offset:.2} grid steps"),
    )
}

/// Exhaustive optimum over all assignments, with the optimizer's feasibility
/// slack granted to the oracle so it stays an upper bound.
fn brute_force_cdr(config: &SystemConfig, gains: &[f64], threshold: f64, eps: f64) -> Option<f64> {
    let m = config.num_subcarriers;
    let cap = config.per_subcarrier_cap_w;
    let budget = config.total_budget_w * (1.0 + eps);
    let mut best: Option<f64> = None;
    for mask in 0u32..(1 << m) {
        let sensing: Vec<f64> = (0..m).filter(|i| mask >> i & 1 == 1).map(|i| (i + 1) as f64).collect();
        let Some(p_s) = min_sensing_power(&sensing, threshold * (1.0 - eps), cap) else {
            continue;
        };
        if p_s > budget {
            continue;
        }
        let comm: Vec<f64> = (0..m).filter(|i| mask >> i & 1 == 0).map(|i| gains[i]).collect();
        let rate = water_filled_rate(&comm, budget - p_s, config.noise_power_w, cap);
        best = Some(best.map_or(rate, |b: f64| b.max(rate)));
    }
    best
}

fn brute_force_oracle() -> Verdict {
    const REL: f64 = 1e-9;
    let start = Instant::now();
    let opt = OptimizerConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let (mut instances, mut within_90, mut failures) = (0, 0, Vec::new());
    let mut min_ratio = f64::INFINITY;
    let mut seed = 0u64;
    while instances < 20 {
        seed += 1;
        let (config, paths) = small_scenario(8, rng.random_range(0.3..0.8), rng.random_range(0.05..0.4), seed);
        let channel = channel_response(&config, &paths);
        let threshold = sensing_requirement(&config, &paths).binding;
        let Some(optimum) = brute_force_cdr(&config, channel.gains(), threshold, opt.eps_feas) else {
            continue;
        };
        instances += 1;
        let ours = optimize(&channel, &paths, &config, &opt);
        let best_baseline = [Method::Saupa, Method::Rsapa, Method::Rsaupa]
            .into_iter()
            .filter_map(|m| allocate(m, &channel, &paths, &config, &opt, 0.5, seed, &[]).ok())
            .filter(|a| a.feasible)
            .map(|a| a.cdr)
            .fold(0.0, f64::max);
        let ratio = ours.achieved_cdr / optimum;
        min_ratio = min_ratio.min(ratio);
        if ratio >= 0.9 {
            within_90 += 1;
        }
        if !ours.feasible {
            failures.push(format!("seed {seed}: infeasible"));
        } else if ours.achieved_cdr < best_baseline * (1.0 - REL) {
            failures.push(format!("seed {seed}: {:.4} below baseline {best_baseline:.4}", ours.achieved_cdr));
        } else if ours.achieved_cdr > optimum * (1.0 + REL) {
            failures.push(format!("seed {seed}: {:.4} above optimum {optimum:.4}", ours.achieved_cdr));
        }
    }
    let t = secs(start.elapsed());
    verdict(
        failures.is_empty() && within_90 >= 16 && t < 60.0,
        format!(
            "20 instances, {within_90}/20 at >= 90% of optimum (need 16), min ratio {min_ratio:.4}, {t:.1} s (limit 60 s){}",
            if failures.is_empty() { String::new() } else { format!("; {}", failures.join(", ")) }
        ),
    )
}

fn feasibility_invariants() -> Verdict {
    const BOUND_M: f64 = 0.05;
    const CRB_LIMIT_M: f64 = 0.0505;
    let scenario = default_scenario(1);
    let channel = scenario.channel();
    let opt = OptimizerConfig::default();
    let mut notes = Vec::new();
    let mut feasible = 0;
    let mut ok = true;
    for budget in [6.0, 8.0, 10.0, 12.0, 14.0] {
        let config = scenario.config.clone().with_budget(budget).with_range_error_bound(BOUND_M);
        let r = optimize(&channel, &scenario.paths, &config, &opt);
        if !r.feasible {
            notes.push(format!("{budget} W infeasible"));
            continue;
        }
        feasible += 1;
        let w = &r.waveform;
        let (worst, _) = crb_ranges(&config, &scenario.paths, w);
        let total = w.total_power();
        let within_cap = w.power.iter().all(|&p| (0.0..=config.per_subcarrier_cap_w).contains(&p));
        if total > 1.001 * budget || !within_cap || worst > CRB_LIMIT_M {
            ok = false;
            notes.push(format!("{budget} W: power {total:.4} W, cap ok {within_cap}, CRB range {worst:.5} m"));
        } else {
            notes.push(format!("{budget} W: {total:.3} W, {worst:.5} m"));
        }
    }
    verdict(ok && feasible > 0, format!("{feasible}/5 feasible; {}", notes.join(", ")))
}

fn default_sweep(budgets: Vec<f64>, bounds: Vec<f64>, methods: Vec<Method>, trials: usize) -> SweepSpec {
    SweepSpec {
        budgets_w: budgets,
        range_bounds_m: bounds,
        methods,
        trials,
        ..SweepSpec::default()
    }
}

fn cdr_trend() -> Verdict {
    let start = Instant::now();
    let budgets = vec![6.0, 8.0, 10.0, 12.0];
    let bounds = vec![0.05, 0.1, 0.2];
    let spec = default_sweep(budgets.clone(), bounds.clone(), vec![Method::Jpcde], 0);
    let result = match run_sweep(&spec, &default_config(), &OptimizerConfig::default(), 7) {
        Ok(r) => r,
        Err(e) => return verdict(false, format!("sweep failed: {e}")),
    };
    let cdr = |b: f64, j: f64| {
        result
            .rows
            .iter()
            .find(|r| r.budget_w == b && r.range_bound_m == j)
            .map_or(f64::NAN, |r| r.mean_cdr)
    };
    let mut breaks = Vec::new();
    for &b in &budgets {
        for w in bounds.windows(2) {
            if !(cdr(b, w[0]) <= cdr(b, w[1])) {
                breaks.push(format!("P_req {b}: {} m -> {} m", w[0], w[1]));
            }
        }
    }
    for &j in &bounds {
        for w in budgets.windows(2) {
            if !(cdr(w[0], j) <= cdr(w[1], j)) {
                breaks.push(format!("bound {j}: {} W -> {} W", w[0], w[1]));
            }
        }
    }
    let t = secs(start.elapsed());
    verdict(
        breaks.is_empty() && t < 600.0,
        format!(
            "4x3 grid at M = 1024, CDR {:.1}..{:.1}, {} order breaks, {t:.1} s (limit 600 s){}",
            cdr(6.0, 0.05),
            cdr(12.0, 0.2),
            breaks.len(),
            if breaks.is_empty() { String::new() } else { format!("; {}", breaks.join(", ")) }
        ),
    )
}

fn method_ordering() -> Verdict {
    let start = Instant::now();
    let spec = default_sweep(vec![6.0, 8.0, 10.0, 12.0, 14.0], vec![0.05], Method::ALL.to_vec(), 300);
    let result = match run_sweep(&spec, &default_config(), &OptimizerConfig::default(), 8) {
        Ok(r) => r,
        Err(e) => return verdict(false, format!("sweep failed: {e}")),
    };
    let mut problems = Vec::new();
    let mut summary = Vec::new();
    for c in compare_methods(&result.rows) {
        let cdr_of = |m: Method| c.ranking.iter().find(|(k, _)| *k == m).map(|x| x.1);
        if let (Some(a), Some(b)) = (cdr_of(Method::Jpcde), cdr_of(Method::Rsapa)) {
            if !(a > b) {
                problems.push(format!("{} W: JPCDE {a:.1} <= RSAPA {b:.1}", c.budget_w));
            }
        }
        if c.ranking.len() > 1 && c.ranking.last().map(|x| x.0) != Some(Method::Rsaupa) {
            problems.push(format!("{} W: RSAUPA not last", c.budget_w));
        }
        if cdr_of(Method::Jpcde).is_none() {
            problems.push(format!("{} W: JPCDE infeasible", c.budget_w));
        }
        let ranking: Vec<String> = c.ranking.iter().map(|(m, v)| format!("{m} {v:.0}")).collect();
        summary.push(format!("{} W: {}", c.budget_w, ranking.join(" > ")));
    }
    let rmse: Vec<String> = result
        .rows
        .iter()
        .filter(|r| r.method == Method::Jpcde)
        .map(|r| format!("{:.3}", r.rmse_range_m))
        .collect();
    let t = secs(start.elapsed());
    verdict(
        problems.is_empty(),
        format!(
            "300 trials/point at 0.05 m, {t:.0} s; {}; JPCDE RMSE [{}] m{}",
            summary.join("; "),
            rmse.join(", "),
            if problems.is_empty() { String::new() } else { format!("; {}", problems.join(", ")) }
        ),
    )
}

fn mle_efficiency() -> Verdict {
    const LO: f64 = 0.9;
    const HI: f64 = 1.5;
    const SNR: f64 = 100.0;
    let start = Instant::now();
    let config = SystemConfig {
        num_subcarriers: 256,
        ..default_config()
    };
    let scenario = scenario_from_config(config.clone(), 1, 11).unwrap();
    let b2 = scenario.paths.paths()[0].coefficient.norm_sqr();
    // per-antenna SNR of every subcarrier is exactly 20 dB
    let p = SNR * config.noise_power_w / b2;
    let waveform = Waveform::new(vec![true; 256], vec![p; 256]).unwrap();
    let batch = match run_trials(&scenario, &waveform, 2000, 12, 1024, Default::default()) {
        Ok(b) => b,
        Err(e) => return verdict(false, format!("trials failed: {e}")),
    };
    let (_, crb_m) = crb_ranges(&config, &scenario.paths, &waveform);
    let rmse = (batch.records.iter().map(|r| r.range_err_m.powi(2)).sum::<f64>() / batch.records.len() as f64).sqrt();
    let ratio = rmse / crb_m;
    let t = secs(start.elapsed());
    verdict(
        (LO..=HI).contains(&ratio) && batch.failures == 0 && t < 120.0,
        format!(
            "2000 trials, SNR 20 dB, RMSE {rmse:.3e} m vs sqrt(CRB) {crb_m:.3e} m, ratio {ratio:.3} (need {LO}..{HI}), {} failures, {t:.1} s (limit 120 s)",
            batch.failures
        ),
    )
}

fn run_cli(args: &[&str], out: &FsPath) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_isac"))
        .args(args)
        .arg("--out")
        .arg(out)
        .arg("--quiet")
        .status()
        .map_err(|e| e.to_string())?;
    match status.code() {
        Some(0) | Some(2) => Ok(()),
        c => Err(format!("{args:?} exited with {c:?}")),
    }
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.json");
    std::fs::write(
        &config,
        r#"{"scenario": {"num_subcarriers": 128, "num_paths": 3},
            "sweep": {"budgets_w": [2.0, 4.0], "range_bounds_m": [0.5, 1.0], "trials": 20, "num_scenarios": 2},
            "optimizer": {"max_iterations": 500},
            "seed": 5}"#,
    )
    .unwrap();
    let cfg = config.to_str().unwrap();
    let runs = [("1", "a"), ("1", "b"), ("2", "c"), ("8", "d")];
    for (threads, tag) in runs {
        for cmd in ["optimize", "sweep"] {
            let out = dir.path().join(format!("{cmd}-{tag}"));
            if let Err(e) = run_cli(&[cmd, "--config", cfg, "--threads", threads], &out) {
                return verdict(false, e);
            }
        }
    }
    let files = [
        ("optimize", "waveform.csv"),
        ("sweep", "aggregate.csv"),
        ("sweep", "fig3_data.csv"),
        ("sweep", "fig4_data.csv"),
    ];
    let mut diffs = Vec::new();
    for (cmd, file) in files {
        let read = |tag: &str| std::fs::read(dir.path().join(format!("{cmd}-{tag}")).join(file)).unwrap_or_default();
        let reference = read("a");
        if reference.is_empty() {
            diffs.push(format!("{file} missing"));
        }
        for (_, tag) in &runs[1..] {
            if read(tag) != reference {
                diffs.push(format!("{file} differs in run {tag}"));
            }
        }
    }
    verdict(
        diffs.is_empty(),
        format!(
            "4 runs (threads 1, 1, 2, 8) of optimize and sweep: {}",
            if diffs.is_empty() { "byte-identical".to_string() } else { diffs.join(", ") }
        ),
    )
}

fn complexity() -> Verdict {
    const SLACK: f64 = 2.0;
    let opt = OptimizerConfig::default();
    let mut per_iter = Vec::new();
    for m in [256usize, 1024, 4096] {
        let scale = 1024.0 / m as f64;
        let config = SystemConfig {
            num_subcarriers: m,
            ..default_config()
        }
        .with_budget(10.0 / scale)
        .with_range_error_bound(0.05 * scale.powf(1.5));
        let scenario = scenario_from_config(config.clone(), 6, 13).unwrap();
        let channel = scenario.channel();
        let mut best = f64::INFINITY;
        for _ in 0..3 {
            let start = Instant::now();
            let r = optimize(&channel, &scenario.paths, &config, &opt);
            best = best.min(secs(start.elapsed()) / r.iterations_used.max(1) as f64);
        }
        per_iter.push((m, best));
    }
    let mlogm = |m: usize| m as f64 * (m as f64).ln();
    let mut ok = true;
    let mut ratios = Vec::new();
    for w in per_iter.windows(2) {
        let (m0, t0) = w[0];
        let (m1, t1) = w[1];
        let observed = t1 / t0;
        let allowed = SLACK * mlogm(m1) / mlogm(m0);
        ok &= observed <= allowed;
        ratios.push(format!("{m0}->{m1}: x{observed:.2} (allowed x{allowed:.2})"));
    }
    let times: Vec<String> = per_iter.iter().map(|(m, t)| format!("M={m} {:.1} us", t * 1e6)).collect();
    verdict(ok, format!("per iteration {}; {}", times.join(", "), ratios.join(", ")))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("crb closed form vs FIM inversion", crb_vs_fim_inversion),
        ("FIM vs numeric Hessian", fim_vs_numeric_hessian),
        ("quadratic transform identity", quadratic_transform_identity),
        ("brute-force oracle at M = 8", brute_force_oracle),
        ("feasibility invariants on the default scenario", feasibility_invariants),
        ("CDR trend over budget and bound", cdr_trend),
        ("method ordering at 0.05 m", method_ordering),
        ("delay MLE efficiency", mle_efficiency),
        ("determinism across runs and threads", determinism),
        ("per-iteration complexity", complexity),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let v = check();
        if !v.pass {
            failed += 1;
        }
        println!("{} {:>2} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, k + 1, v.detail);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
