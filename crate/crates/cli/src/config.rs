use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use isac_core::harness::{default_config, SweepSpec, DEFAULT_NUM_PATHS};
use isac_core::optimizer::OptimizerConfig;
use isac_core::SystemConfig;
use serde::{Deserialize, Serialize};

/// Overrides on top of the reference system configuration. Unset fields keep
/// their defaults; `range_error_bound_m` and `delay_error_bound_s` are
/// alternative spellings of the same bound and may not both be given.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub num_subcarriers: Option<usize>,
    pub subcarrier_spacing_hz: Option<f64>,
    pub num_rx_antennas: Option<usize>,
    pub noise_power_w: Option<f64>,
    pub per_subcarrier_cap_w: Option<f64>,
    pub total_budget_w: Option<f64>,
    pub range_error_bound_m: Option<f64>,
    pub delay_error_bound_s: Option<f64>,
    pub carrier_frequency_hz: Option<f64>,
    pub speed_of_light: Option<f64>,
    pub num_paths: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verbosity {
    Quiet,
    #[default]
    Normal,
    Verbose,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioSection,
    pub optimizer: OptimizerConfig,
    pub sweep: SweepSpec,
    pub output: OutputSection,
    pub seed: u64,
    pub verbosity: Verbosity,
}

impl RunConfig {
    /// Reads a config file, returning the parsed config and the raw bytes.
    pub fn load(path: &Path) -> Result<(Self, Vec<u8>)> {
        let raw = std::fs::read(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let config: RunConfig =
            serde_json::from_slice(&raw).with_context(|| format!("invalid config {}", path.display()))?;
        Ok((config, raw))
    }

    pub fn num_paths(&self) -> usize {
        self.scenario.num_paths.unwrap_or(DEFAULT_NUM_PATHS)
    }

    /// Reference configuration with the scenario overrides applied.
    pub fn system(&self) -> Result<SystemConfig> {
        let s = &self.scenario;
        let mut c = default_config();
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = s.$field { c.$field = v; })*
            };
        }
        set!(
            num_subcarriers,
            subcarrier_spacing_hz,
            num_rx_antennas,
            noise_power_w,
            per_subcarrier_cap_w,
            total_budget_w,
            delay_error_bound_s,
            speed_of_light
        );
        if s.carrier_frequency_hz.is_some() {
            c.carrier_frequency_hz = s.carrier_frequency_hz;
        }
        match (s.range_error_bound_m, s.delay_error_bound_s) {
            (Some(_), Some(_)) => bail!("scenario: give range_error_bound_m or delay_error_bound_s, not both"),
            (Some(r), None) => {
                if !(r > 0.0) {
                    bail!("scenario.range_error_bound_m must be positive");
                }
                c = c.with_range_error_bound(r);
            }
            _ => {}
        }
        c.validate()?;
        if self.num_paths() == 0 || self.num_paths() > c.num_rx_antennas {
            bail!(
                "scenario.num_paths must lie in 1..={} for {} receive antennas",
                c.num_rx_antennas,
                c.num_rx_antennas
            );
        }
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.system()?;
        self.optimizer.validate()?;
        self.sweep.validate()?;
        Ok(())
    }
}
