//! A single Metropolis-Hastings chain over path space at fixed model precision `R_f`.
//!
//! The proposal is a single-site Gaussian random walk. One sweep visits every state
//! site `(n, a)` in ascending order and then every parameter, applying accepted moves
//! immediately. Step sizes adapt during burn-in only and are frozen while samples are
//! recorded, so the sampling phase satisfies detailed balance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{action, delta_action, ActionBreakdown, ActionError, ForecastCache, ObservationSet, Path, Site};
use crate::dynamics::Model;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SamplerError {
    #[error("invalid chain configuration: {0}")]
    Config(String),
    #[error("non-finite action {value} during {phase}")]
    NonFiniteAction { phase: &'static str, value: f64 },
    #[error("step scales do not match the path layout")]
    StepLayout,
    #[error(transparent)]
    Action(#[from] ActionError),
}

/// Which post-burn-in paths enter the expected path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AverageMode {
    /// The current path after every sweep.
    #[default]
    PerSweep,
    /// The current path after sweeps with at least one accepted move.
    AcceptedOnly,
}

/// Whether state sites share one proposal scale or each site adapts its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepMode {
    #[default]
    Shared,
    PerSite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub burn_in_sweeps: usize,
    pub sample_sweeps: usize,
    /// Proposal standard deviation for state sites, in state units.
    pub initial_step: f64,
    pub param_step: f64,
    pub target_accept: (f64, f64),
    pub adapt_factor: f64,
    /// Sweeps between adaptation checks.
    pub adapt_block: usize,
    pub rng_seed: u64,
    pub average_mode: AverageMode,
    pub step_mode: StepMode,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            burn_in_sweeps: 500,
            sample_sweeps: 1000,
            initial_step: 0.1,
            param_step: 0.05,
            target_accept: (0.2, 0.5),
            adapt_factor: 1.1,
            adapt_block: 25,
            rng_seed: 0,
            average_mode: AverageMode::PerSweep,
            step_mode: StepMode::Shared,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        let fail = |msg: &str| Err(SamplerError::Config(msg.to_string()));
        let (lo, hi) = self.target_accept;
        if self.sample_sweeps < 1 {
            return fail("sample_sweeps must be at least 1");
        }
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return fail("target_accept must satisfy 0 < lo < hi < 1");
        }
        if !(self.adapt_factor > 1.0 && self.adapt_factor.is_finite()) {
            return fail("adapt_factor must exceed 1");
        }
        if self.adapt_block < 1 {
            return fail("adapt_block must be at least 1");
        }
        if !(self.initial_step >= 0.0 && self.initial_step.is_finite())
            || !(self.param_step >= 0.0 && self.param_step.is_finite())
        {
            return fail("step sizes must be finite and non-negative");
        }
        Ok(())
    }
}

/// Proposal standard deviations: one shared state scale or one per state site, plus one
/// per parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepScales {
    pub state: Vec<f64>,
    pub params: Vec<f64>,
}

impl StepScales {
    pub fn from_config(cfg: &ChainConfig, path: &Path) -> Self {
        let sites = match cfg.step_mode {
            StepMode::Shared => 1,
            StepMode::PerSite => path.states.as_flat().len(),
        };
        Self {
            state: vec![cfg.initial_step; sites],
            params: vec![cfg.param_step; path.params.len()],
        }
    }

    /// All scales zero: every proposal returns the current value.
    pub fn zero(path: &Path) -> Self {
        Self {
            state: vec![0.0],
            params: vec![0.0; path.params.len()],
        }
    }

    pub fn is_shared(&self) -> bool {
        self.state.len() == 1
    }

    #[inline]
    fn state_step(&self, flat_index: usize) -> f64 {
        if self.is_shared() {
            self.state[0]
        } else {
            self.state[flat_index]
        }
    }

    /// Mean state scale; equal to the shared scale in shared mode.
    pub fn mean_state_step(&self) -> f64 {
        self.state.iter().sum::<f64>() / self.state.len() as f64
    }

    fn fits(&self, path: &Path) -> bool {
        (self.is_shared() || self.state.len() == path.states.as_flat().len()) && self.params.len() == path.params.len()
    }
}

/// Acceptance counts from one or more sweeps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepStats {
    pub accepted: usize,
    pub proposed: usize,
    /// Per-site state acceptances in flat `(n, a)` order; empty unless tracked.
    pub site_accepted: Vec<u32>,
    pub state_accepted: usize,
    pub state_proposed: usize,
    pub param_accepted: Vec<usize>,
    pub param_proposed: Vec<usize>,
    /// Sum of accepted action changes.
    pub action_change: f64,
}

impl SweepStats {
    fn new(path: &Path, per_site: bool) -> Self {
        Self {
            site_accepted: if per_site {
                vec![0; path.states.as_flat().len()]
            } else {
                Vec::new()
            },
            param_accepted: vec![0; path.params.len()],
            param_proposed: vec![0; path.params.len()],
            ..Self::default()
        }
    }

    fn absorb(&mut self, other: &SweepStats) {
        self.accepted += other.accepted;
        self.proposed += other.proposed;
        self.state_accepted += other.state_accepted;
        self.state_proposed += other.state_proposed;
        self.action_change += other.action_change;
        for (a, b) in self.site_accepted.iter_mut().zip(&other.site_accepted) {
            *a += b;
        }
        for (a, b) in self.param_accepted.iter_mut().zip(&other.param_accepted) {
            *a += b;
        }
        for (a, b) in self.param_proposed.iter_mut().zip(&other.param_proposed) {
            *a += b;
        }
    }
}

/// Metropolis criterion: accept with probability `min(1, exp(-delta))`.
///
/// Non-positive changes are accepted without consuming randomness; `+inf` and NaN are
/// rejected.
pub fn mh_accept<R: Rng + ?Sized>(delta: f64, rng: &mut R) -> bool {
    if delta <= 0.0 {
        return true;
    }
    if !delta.is_finite() {
        return false;
    }
    rng.random::<f64>() < (-delta).exp()
}

/// Burn-in step-size rule: grow above the target band, shrink below it.
pub fn adapt_step(step: f64, observed_rate: f64, target: (f64, f64), adapt_factor: f64) -> f64 {
    if observed_rate > target.1 {
        step * adapt_factor
    } else if observed_rate < target.0 {
        step / adapt_factor
    } else {
        step
    }
}

/// Evaluates proposal deltas, through cached forecasts when `R_f > 0`.
enum Evaluator {
    Cached(ForecastCache),
    Direct,
}

struct Sweeper<'a> {
    obs: &'a ObservationSet,
    model: &'a dyn Model,
    r_f: f64,
    eval: Evaluator,
}

impl<'a> Sweeper<'a> {
    fn new(path: &Path, obs: &'a ObservationSet, model: &'a dyn Model, r_f: f64) -> Result<Self, SamplerError> {
        obs.check_path(path)?;
        let eval = if r_f > 0.0 {
            Evaluator::Cached(ForecastCache::new(path, model)?)
        } else {
            // validates r_f and the model layout
            crate::action::model_error(path, model, r_f)?;
            Evaluator::Direct
        };
        Ok(Self { obs, model, r_f, eval })
    }

    fn sweep(&mut self, path: &mut Path, steps: &StepScales, rng: &mut ChaCha8Rng, per_site: bool) -> SweepStats {
        let mut stats = SweepStats::new(path, per_site);
        let d = path.dimension();
        for step in 0..=path.steps() {
            for component in 0..d {
                let flat = step * d + component;
                let site = Site::State { step, component };
                let accepted = self.propose(path, site, steps.state_step(flat), rng, &mut stats);
                stats.state_proposed += 1;
                if accepted {
                    stats.state_accepted += 1;
                    if per_site {
                        stats.site_accepted[flat] += 1;
                    }
                }
            }
        }
        for j in 0..path.params.len() {
            let accepted = self.propose(path, Site::Param(j), steps.params[j], rng, &mut stats);
            stats.param_proposed[j] += 1;
            if accepted {
                stats.param_accepted[j] += 1;
            }
        }
        stats
    }

    #[inline]
    fn propose(
        &mut self,
        path: &mut Path,
        site: Site,
        scale: f64,
        rng: &mut ChaCha8Rng,
        stats: &mut SweepStats,
    ) -> bool {
        let z: f64 = rng.sample(StandardNormal);
        let value = path.get(site) + scale * z;
        let delta = if value == path.get(site) {
            0.0
        } else {
            match &mut self.eval {
                Evaluator::Cached(cache) => cache.delta(path, site, value, self.obs, self.model, self.r_f),
                Evaluator::Direct => {
                    delta_action(path, site, value, self.obs, self.model, self.r_f).unwrap_or(f64::INFINITY)
                }
            }
        };
        stats.proposed += 1;
        if mh_accept(delta, rng) {
            path.set(site, value);
            if let Evaluator::Cached(cache) = &mut self.eval {
                cache.commit(path, site);
            }
            stats.accepted += 1;
            stats.action_change += delta;
            true
        } else {
            false
        }
    }
}

/// One full sweep of single-site proposals, mutating `path` in place.
pub fn sweep(
    path: &mut Path,
    obs: &ObservationSet,
    model: &dyn Model,
    r_f: f64,
    steps: &StepScales,
    rng: &mut ChaCha8Rng,
) -> Result<SweepStats, SamplerError> {
    if !steps.fits(path) {
        return Err(SamplerError::StepLayout);
    }
    let mut sweeper = Sweeper::new(path, obs, model, r_f)?;
    Ok(sweeper.sweep(path, steps, rng, !steps.is_shared()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainResult {
    /// Mean of the recorded post-burn-in paths.
    pub expected_path: Path,
    /// Number of recorded snapshots.
    pub n_accepted: usize,
    /// Accepted fraction of sampling-phase proposals.
    pub acceptance_rate: f64,
    /// Mean state proposal scale at the end of the chain.
    pub final_step: f64,
    pub final_steps: StepScales,
    pub action_at_mean: ActionBreakdown,
}

/// The chain state after one sampling-phase sweep.
pub struct Snapshot<'a> {
    pub sweep: usize,
    pub path: &'a Path,
    pub steps: &'a StepScales,
    /// Whether this path entered the expected path.
    pub recorded: bool,
}

pub fn run_chain(
    init: &Path,
    obs: &ObservationSet,
    model: &dyn Model,
    r_f: f64,
    cfg: &ChainConfig,
) -> Result<ChainResult, SamplerError> {
    let steps = StepScales::from_config(cfg, init);
    run_chain_from(init, obs, model, r_f, cfg, steps, &mut |_| {})
}

/// [`run_chain`] starting from explicit step scales, reporting every sampling-phase sweep
/// to `observer`.
pub fn run_chain_from(
    init: &Path,
    obs: &ObservationSet,
    model: &dyn Model,
    r_f: f64,
    cfg: &ChainConfig,
    mut steps: StepScales,
    observer: &mut dyn FnMut(&Snapshot),
) -> Result<ChainResult, SamplerError> {
    cfg.validate()?;
    let rng = &mut ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    if !steps.fits(init) {
        return Err(SamplerError::StepLayout);
    }
    let start = action(init, obs, model, r_f)?.total;
    if !start.is_finite() {
        return Err(SamplerError::NonFiniteAction {
            phase: "initialization",
            value: start,
        });
    }
    let per_site = !steps.is_shared();
    let mut path = init.clone();
    let mut sweeper = Sweeper::new(&path, obs, model, r_f)?;
    let mut running = start;

    let mut block = SweepStats::new(&path, per_site);
    for s in 0..cfg.burn_in_sweeps {
        let stats = sweeper.sweep(&mut path, &steps, rng, per_site);
        running += stats.action_change;
        if !running.is_finite() {
            return Err(SamplerError::NonFiniteAction {
                phase: "burn-in",
                value: running,
            });
        }
        block.absorb(&stats);
        if (s + 1) % cfg.adapt_block == 0 {
            adapt(&mut steps, &block, cfg);
            block = SweepStats::new(&path, per_site);
        }
    }

    let flat_len = path.total_dimension();
    let mut mean = vec![0.0; flat_len];
    let mut recorded = 0usize;
    let mut sampled = SweepStats::new(&path, false);
    for s in 0..cfg.sample_sweeps {
        let stats = sweeper.sweep(&mut path, &steps, rng, false);
        running += stats.action_change;
        if !running.is_finite() {
            return Err(SamplerError::NonFiniteAction {
                phase: "sampling",
                value: running,
            });
        }
        let record = match cfg.average_mode {
            AverageMode::PerSweep => true,
            AverageMode::AcceptedOnly => stats.accepted > 0,
        };
        if record {
            recorded += 1;
            let inv = 1.0 / recorded as f64;
            let coords = path.states.as_flat().iter().chain(&path.params);
            for (m, x) in mean.iter_mut().zip(coords) {
                *m += (x - *m) * inv;
            }
        }
        sampled.absorb(&stats);
        observer(&Snapshot {
            sweep: s,
            path: &path,
            steps: &steps,
            recorded: record,
        });
    }

    let expected_path = if recorded == 0 {
        path
    } else {
        let n_states = path.states.as_flat().len();
        let mut out = path;
        out.states.as_flat_mut().copy_from_slice(&mean[..n_states]);
        out.params.copy_from_slice(&mean[n_states..]);
        out
    };
    let action_at_mean = action(&expected_path, obs, model, r_f)?;
    if !action_at_mean.total.is_finite() {
        return Err(SamplerError::NonFiniteAction {
            phase: "expected path",
            value: action_at_mean.total,
        });
    }
    Ok(ChainResult {
        expected_path,
        n_accepted: recorded,
        acceptance_rate: sampled.accepted as f64 / sampled.proposed.max(1) as f64,
        final_step: steps.mean_state_step(),
        final_steps: steps,
        action_at_mean,
    })
}

fn adapt(steps: &mut StepScales, block: &SweepStats, cfg: &ChainConfig) {
    let rule = |step: f64, acc: f64, prop: f64| {
        if prop > 0.0 {
            adapt_step(step, acc / prop, cfg.target_accept, cfg.adapt_factor)
        } else {
            step
        }
    };
    if steps.is_shared() {
        steps.state[0] = rule(steps.state[0], block.state_accepted as f64, block.state_proposed as f64);
    } else {
        let sweeps = block.state_proposed as f64 / steps.state.len() as f64;
        for (s, &acc) in steps.state.iter_mut().zip(&block.site_accepted) {
            *s = rule(*s, acc as f64, sweeps);
        }
    }
    for j in 0..steps.params.len() {
        steps.params[j] = rule(
            steps.params[j],
            block.param_accepted[j] as f64,
            block.param_proposed[j] as f64,
        );
    }
}
