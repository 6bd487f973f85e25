//! Run configuration: one TOML file with `model`, `twin`, `schedule` and `chain` sections.
//!
//! Unknown keys are rejected. Every key except `twin.sigma` has a default; the resolved
//! configuration is written to `meta.json` next to the results, and a `meta.json` can be
//! passed back as `--config` to repeat a run.

use std::path::{Path, PathBuf};

use pamc::annealer::{ChainOverride, ChainPlan, Interval};
use pamc::sampler::{AverageMode, StepMode};
use pamc::{AnnealSchedule, ChainConfig, Lorenz96, TwinConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "defaults::master_seed")]
    pub master_seed: u64,
    #[serde(default = "defaults::output_dir")]
    pub output_dir: PathBuf,
    /// Worker threads; unset means all available cores. Results do not depend on it.
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub model: ModelSection,
    pub twin: TwinSection,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub chain: ChainSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "defaults::model_name")]
    pub name: String,
    #[serde(default = "defaults::dimension")]
    pub dimension: usize,
    #[serde(default = "defaults::dt")]
    pub dt: f64,
    /// Uniform prior range for the forcing when drawing initial paths.
    #[serde(default = "defaults::nu_prior")]
    pub nu_prior: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwinSection {
    #[serde(default = "defaults::nu_true")]
    pub nu_true: f64,
    #[serde(default = "defaults::window_steps")]
    pub window_steps: usize,
    #[serde(default = "defaults::n_tau")]
    pub n_tau: usize,
    /// Observed components, 1-based.
    #[serde(default = "defaults::obs_components")]
    pub obs_components: Vec<usize>,
    /// Observation noise standard deviation. Required.
    pub sigma: f64,
    #[serde(default = "defaults::prediction_steps")]
    pub prediction_steps: usize,
    #[serde(default = "defaults::transient_steps")]
    pub transient_steps: usize,
    /// 1-based component whose forecast error is scored by `twin`.
    #[serde(default = "defaults::score_component")]
    pub score_component: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    #[serde(default = "defaults::r_f0")]
    pub r_f0: f64,
    #[serde(default = "defaults::alpha")]
    pub alpha: f64,
    #[serde(default = "defaults::beta_max")]
    pub beta_max: usize,
    #[serde(default = "defaults::n_paths")]
    pub n_paths: usize,
    #[serde(default = "defaults::r_m")]
    pub r_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSection {
    #[serde(default = "defaults::burn_in_sweeps")]
    pub burn_in_sweeps: usize,
    #[serde(default = "defaults::sample_sweeps")]
    pub sample_sweeps: usize,
    #[serde(default = "defaults::initial_step")]
    pub initial_step: f64,
    #[serde(default = "defaults::param_step")]
    pub param_step: f64,
    #[serde(default = "defaults::target_accept")]
    pub target_accept: [f64; 2],
    #[serde(default = "defaults::adapt_factor")]
    pub adapt_factor: f64,
    #[serde(default = "defaults::adapt_block")]
    pub adapt_block: usize,
    #[serde(default)]
    pub average_mode: AverageMode,
    #[serde(default)]
    pub step_mode: StepMode,
    #[serde(default)]
    pub overrides: Vec<ChainOverride>,
}

mod defaults {
    use std::path::PathBuf;

    use pamc::{AnnealSchedule, ChainConfig, TwinConfig};

    pub fn master_seed() -> u64 {
        2024
    }
    pub fn output_dir() -> PathBuf {
        PathBuf::from("out")
    }
    pub fn model_name() -> String {
        "lorenz96".into()
    }
    pub fn dimension() -> usize {
        TwinConfig::lorenz96_d20(0.0).dimension
    }
    pub fn dt() -> f64 {
        TwinConfig::lorenz96_d20(0.0).dt
    }
    pub fn nu_prior() -> [f64; 2] {
        [4.0, 12.0]
    }
    pub fn nu_true() -> f64 {
        TwinConfig::lorenz96_d20(0.0).nu_true
    }
    pub fn window_steps() -> usize {
        TwinConfig::lorenz96_d20(0.0).window_steps
    }
    pub fn n_tau() -> usize {
        1
    }
    pub fn obs_components() -> Vec<usize> {
        TwinConfig::lorenz96_d20(0.0)
            .obs_components
            .iter()
            .map(|c| c + 1)
            .collect()
    }
    pub fn prediction_steps() -> usize {
        TwinConfig::lorenz96_d20(0.0).prediction_steps
    }
    pub fn transient_steps() -> usize {
        TwinConfig::lorenz96_d20(0.0).transient_steps
    }
    pub fn score_component() -> usize {
        2
    }
    pub fn r_f0() -> f64 {
        AnnealSchedule::default().r_f0
    }
    pub fn alpha() -> f64 {
        AnnealSchedule::default().alpha
    }
    pub fn beta_max() -> usize {
        AnnealSchedule::default().beta_max
    }
    pub fn n_paths() -> usize {
        AnnealSchedule::default().n_paths
    }
    pub fn r_m() -> f64 {
        1.0
    }
    pub fn burn_in_sweeps() -> usize {
        ChainConfig::default().burn_in_sweeps
    }
    pub fn sample_sweeps() -> usize {
        ChainConfig::default().sample_sweeps
    }
    pub fn initial_step() -> f64 {
        ChainConfig::default().initial_step
    }
    pub fn param_step() -> f64 {
        ChainConfig::default().param_step
    }
    pub fn target_accept() -> [f64; 2] {
        let (lo, hi) = ChainConfig::default().target_accept;
        [lo, hi]
    }
    pub fn adapt_factor() -> f64 {
        ChainConfig::default().adapt_factor
    }
    pub fn adapt_block() -> usize {
        ChainConfig::default().adapt_block
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            name: defaults::model_name(),
            dimension: defaults::dimension(),
            dt: defaults::dt(),
            nu_prior: defaults::nu_prior(),
        }
    }
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            r_f0: defaults::r_f0(),
            alpha: defaults::alpha(),
            beta_max: defaults::beta_max(),
            n_paths: defaults::n_paths(),
            r_m: defaults::r_m(),
        }
    }
}

impl Default for ChainSection {
    fn default() -> Self {
        Self {
            burn_in_sweeps: defaults::burn_in_sweeps(),
            sample_sweeps: defaults::sample_sweeps(),
            initial_step: defaults::initial_step(),
            param_step: defaults::param_step(),
            target_accept: defaults::target_accept(),
            adapt_factor: defaults::adapt_factor(),
            adapt_block: defaults::adapt_block(),
            average_mode: AverageMode::default(),
            step_mode: StepMode::default(),
            overrides: Vec::new(),
        }
    }
}

impl RunConfig {
    /// Reads a TOML config, or the `config` object of a previously written `meta.json`.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let cfg: RunConfig = if path.extension().is_some_and(|e| e == "json") {
            let meta: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let inner = meta.get("config").cloned().unwrap_or(meta);
            serde_json::from_value(inner).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.model.name != "lorenz96" {
            return Err(CliError::Config(format!("unknown model '{}'", self.model.name)));
        }
        self.lorenz96()?;
        if self
            .twin
            .obs_components
            .iter()
            .any(|&c| c == 0 || c > self.model.dimension)
        {
            return Err(CliError::Config(format!(
                "twin.obs_components are 1-based and must lie in 1..={}",
                self.model.dimension
            )));
        }
        if self.twin.score_component == 0 || self.twin.score_component > self.model.dimension {
            return Err(CliError::Config(
                "twin.score_component is 1-based and must not exceed the dimension".into(),
            ));
        }
        self.twin_config()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.schedule()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.chain_plan()
            .base
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Interval::new(self.model.nu_prior[0], self.model.nu_prior[1]).map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.schedule.r_m > 0.0 && self.schedule.r_m.is_finite()) {
            return Err(CliError::Config("schedule.r_m must be positive".into()));
        }
        Ok(())
    }

    pub fn lorenz96(&self) -> Result<Lorenz96, CliError> {
        Lorenz96::new(self.model.dimension, self.model.dt).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn twin_config(&self) -> TwinConfig {
        TwinConfig {
            dimension: self.model.dimension,
            nu_true: self.twin.nu_true,
            dt: self.model.dt,
            window_steps: self.twin.window_steps,
            n_tau: self.twin.n_tau,
            obs_components: self.twin.obs_components.iter().map(|c| c.saturating_sub(1)).collect(),
            sigma: self.twin.sigma,
            r_m: self.schedule.r_m,
            prediction_steps: self.twin.prediction_steps,
            transient_steps: self.twin.transient_steps,
        }
    }

    pub fn schedule(&self) -> AnnealSchedule {
        AnnealSchedule {
            r_f0: self.schedule.r_f0,
            alpha: self.schedule.alpha,
            beta_max: self.schedule.beta_max,
            n_paths: self.schedule.n_paths,
        }
    }

    pub fn chain_plan(&self) -> ChainPlan {
        let c = &self.chain;
        ChainPlan {
            base: ChainConfig {
                burn_in_sweeps: c.burn_in_sweeps,
                sample_sweeps: c.sample_sweeps,
                initial_step: c.initial_step,
                param_step: c.param_step,
                target_accept: (c.target_accept[0], c.target_accept[1]),
                adapt_factor: c.adapt_factor,
                adapt_block: c.adapt_block,
                rng_seed: self.master_seed,
                average_mode: c.average_mode,
                step_mode: c.step_mode,
            },
            overrides: c.overrides.clone(),
        }
    }

    pub fn param_ranges(&self) -> Vec<Interval> {
        vec![Interval {
            lo: self.model.nu_prior[0],
            hi: self.model.nu_prior[1],
        }]
    }

    pub fn threads(&self) -> usize {
        self.threads
            .filter(|&t| t > 0)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }
}
