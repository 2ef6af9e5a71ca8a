use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use isac_core::harness::{AggregateRow, PointComparison, TrialRecord};
use isac_core::model::ChannelResponse;
use isac_core::optimizer::IterationRecord;
use isac_core::Waveform;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// 12 significant digits in scientific notation; empty for NaN.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.11e}")
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Inputs identifying a run, written before any computation starts.
#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub seed: u64,
    pub threads: usize,
    pub config_path: Option<PathBuf>,
    /// SHA-256 of the config file bytes, if one was given.
    pub config_sha256: Option<String>,
    /// SHA-256 of the resolved configuration as canonical JSON.
    pub resolved_config_sha256: String,
    pub resolved_config: &'a crate::config::RunConfig,
    pub extra_inputs: Vec<(PathBuf, String)>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct WaveformRow {
    pub m: usize,
    pub u_m: u8,
    #[serde(rename = "P_m_watts")]
    pub p_m_watts: f64,
    pub gain: f64,
}

pub fn write_waveform(path: &Path, waveform: &Waveform, channel: &ChannelResponse) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["m", "u_m", "P_m_watts", "gain"])?;
    for (i, ((&s, &p), &g)) in waveform.assignment.iter().zip(&waveform.power).zip(channel.gains()).enumerate() {
        w.write_record([(i + 1).to_string(), u8::from(s).to_string(), num(p), num(g)])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a waveform CSV; rows must list `m = 1..M` in order.
pub fn read_waveform(path: &Path) -> Result<Waveform> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("cannot read waveform {}", path.display()))?;
    let mut assignment = Vec::new();
    let mut power = Vec::new();
    for (k, row) in r.deserialize::<WaveformRow>().enumerate() {
        let row = row.with_context(|| format!("{}: malformed row {}", path.display(), k + 1))?;
        if row.m != k + 1 || row.u_m > 1 {
            anyhow::bail!("{}: row {} must have m = {} and u_m in {{0, 1}}", path.display(), k + 1, k + 1);
        }
        assignment.push(row.u_m == 1);
        power.push(row.p_m_watts);
    }
    Ok(Waveform::new(assignment, power)?)
}

pub fn write_trace(path: &Path, trace: &[IterationRecord]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["k", "cdr_bps_hz", "effective_bandwidth", "lambda", "mu", "num_sensing", "feasible"])?;
    for r in trace {
        w.write_record([
            r.k.to_string(),
            num(r.cdr),
            num(r.effective_bandwidth),
            num(r.lambda),
            num(r.mu),
            r.num_sensing.to_string(),
            u8::from(r.feasible).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trials(path: &Path, records: &[TrialRecord]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["trial", "path", "tau_true_s", "tau_hat_s", "range_err_m", "b_err_abs"])?;
    for r in records {
        w.write_record([
            r.trial.to_string(),
            r.path.to_string(),
            num(r.tau_true_s),
            num(r.tau_hat_s),
            num(r.range_err_m),
            num(r.b_err_abs),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub const AGGREGATE_COLUMNS: [&str; 16] = [
    "method",
    "sweep_param",
    "sweep_value",
    "mean_cdr_bps_hz",
    "crb_range_m",
    "rmse_range_m",
    "feasibility_rate",
    "n_sensing_mean",
    "p_req_w",
    "range_bound_m",
    "cdr_std_err",
    "crb_range_rms_m",
    "rmse_range_worst_m",
    "trials",
    "estimation_failures",
    "errors",
];

pub fn write_aggregate(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(AGGREGATE_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.method.name().to_string(),
            r.sweep_param.clone(),
            num(r.sweep_value),
            num(r.mean_cdr),
            num(r.crb_range_m),
            num(r.rmse_range_m),
            num(r.feasibility_rate),
            num(r.n_sensing_mean),
            num(r.budget_w),
            num(r.range_bound_m),
            num(r.cdr_std_err),
            num(r.crb_range_rms_m),
            num(r.rmse_range_worst_m),
            r.trials.to_string(),
            r.estimation_failures.to_string(),
            r.errors.join("; "),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// The columns of an aggregate CSV that a comparison needs.
#[derive(Debug, Deserialize)]
pub struct AggregateInput {
    pub method: String,
    pub p_req_w: f64,
    pub range_bound_m: f64,
    pub mean_cdr_bps_hz: Option<f64>,
    pub feasibility_rate: f64,
}

pub fn read_aggregate(path: &Path) -> Result<Vec<AggregateInput>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    r.deserialize()
        .enumerate()
        .map(|(k, row)| row.with_context(|| format!("{}: malformed row {}", path.display(), k + 1)))
        .collect()
}

/// CDR against the range bound, one series per (method, budget).
pub fn write_fig3(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["method", "p_req_w", "range_bound_m", "mean_cdr_bps_hz", "cdr_std_err", "feasibility_rate"])?;
    let mut sorted: Vec<&AggregateRow> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        a.method
            .cmp(&b.method)
            .then(a.budget_w.total_cmp(&b.budget_w))
            .then(a.range_bound_m.total_cmp(&b.range_bound_m))
    });
    for r in sorted {
        w.write_record([
            r.method.name().to_string(),
            num(r.budget_w),
            num(r.range_bound_m),
            num(r.mean_cdr),
            num(r.cdr_std_err),
            num(r.feasibility_rate),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// CDR, CRB range and RMSE against the budget, one series per (method, bound).
pub fn write_fig4(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "method",
        "range_bound_m",
        "p_req_w",
        "mean_cdr_bps_hz",
        "crb_range_m",
        "crb_range_rms_m",
        "rmse_range_m",
        "rmse_range_worst_m",
        "feasibility_rate",
    ])?;
    let mut sorted: Vec<&AggregateRow> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        a.method
            .cmp(&b.method)
            .then(a.range_bound_m.total_cmp(&b.range_bound_m))
            .then(a.budget_w.total_cmp(&b.budget_w))
    });
    for r in sorted {
        w.write_record([
            r.method.name().to_string(),
            num(r.range_bound_m),
            num(r.budget_w),
            num(r.mean_cdr),
            num(r.crb_range_m),
            num(r.crb_range_rms_m),
            num(r.rmse_range_m),
            num(r.rmse_range_worst_m),
            num(r.feasibility_rate),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_comparison(path: &Path, comparisons: &[PointComparison]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["p_req_w", "range_bound_m", "ranking", "violations"])?;
    for c in comparisons {
        let ranking: Vec<String> = c.ranking.iter().map(|(m, cdr)| format!("{m}={}", num(*cdr))).collect();
        w.write_record([num(c.budget_w), num(c.range_bound_m), ranking.join(" > "), c.violations.join("; ")])?;
    }
    w.flush()?;
    Ok(())
}
