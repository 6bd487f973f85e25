//! Precision annealing: a ladder of model precisions `R_f = R_f0 * alpha^beta`.
//!
//! At `R_f = 0` the action's global minimum is known and degenerate, so `N_I` initial
//! paths are built to sit exactly on the data. Each rung runs one chain per path,
//! started from that path's expected path at the previous rung. A rung is a barrier:
//! all `N_I` chains finish before the next rung begins.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{action, ActionBreakdown, ActionError, ObservationSet, Path};
use crate::dynamics::{Model, Trajectory};
use crate::sampler::{run_chain_from, ChainConfig, ChainResult, SamplerError, StepScales};
use crate::seeding::{derive_seed, stream, Role};

/// Redraws allowed per initial path when its forward integration overflows.
pub const INIT_RETRIES: u64 = 32;

#[derive(Debug, Error)]
pub enum AnnealError {
    #[error("invalid annealing setup: {0}")]
    Config(String),
    #[error("initial path {q} overflowed on all {INIT_RETRIES} draws")]
    InitOverflow { q: usize },
    #[error("chain q={q} at beta={beta} failed: {source}")]
    Chain {
        q: usize,
        beta: usize,
        source: SamplerError,
        /// Rows of every rung completed before the failure.
        partial: Box<RunRecord>,
    },
    #[error(transparent)]
    Action(#[from] ActionError),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub r_f0: f64,
    pub alpha: f64,
    pub beta_max: usize,
    /// Number of independent paths `N_I`.
    pub n_paths: usize,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        Self {
            r_f0: 1.0,
            alpha: 1.4,
            beta_max: 55,
            n_paths: 50,
        }
    }
}

impl AnnealSchedule {
    pub fn validate(&self) -> Result<(), AnnealError> {
        if !(self.r_f0 > 0.0 && self.r_f0.is_finite()) {
            return Err(AnnealError::Config("r_f0 must be positive".into()));
        }
        if !(self.alpha > 1.0 && self.alpha.is_finite()) {
            return Err(AnnealError::Config("alpha must exceed 1".into()));
        }
        if self.n_paths < 1 {
            return Err(AnnealError::Config("n_paths must be at least 1".into()));
        }
        Ok(())
    }

    pub fn r_f(&self, beta: usize) -> f64 {
        self.r_f0 * self.alpha.powi(beta as i32)
    }
}

/// Closed interval `[lo, hi]` for uniform draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self, AnnealError> {
        if lo.is_finite() && hi.is_finite() && lo <= hi {
            Ok(Self { lo, hi })
        } else {
            Err(AnnealError::Config(format!("bad interval [{lo}, {hi}]")))
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }
}

/// Uniform prior ranges for `x(0)` components and parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitRanges {
    pub states: Vec<Interval>,
    pub params: Vec<Interval>,
}

impl InitRanges {
    /// `[min(y) - 0.1 span, max(y) + 0.1 span]` over all observed values, applied to every
    /// one of the `dimension` components.
    pub fn from_observations(obs: &ObservationSet, dimension: usize, params: Vec<Interval>) -> Self {
        let (lo, hi) = obs.entries().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| {
            (lo.min(e.2), hi.max(e.2))
        });
        let pad = 0.1 * (hi - lo);
        Self {
            states: vec![
                Interval {
                    lo: lo - pad,
                    hi: hi + pad
                };
                dimension
            ],
            params,
        }
    }
}

/// Builds `n_paths` paths with zero measurement error.
///
/// Path `q` draws `x(0)` and the parameters uniformly from `ranges`, then iterates the
/// model, replacing the observed components by the data at each measurement step before
/// the map is applied. A final pass pins every observed site to its measured value.
/// A path whose integration overflows is redrawn.
pub fn init_paths(
    obs: &ObservationSet,
    model: &dyn Model,
    window_steps: usize,
    n_paths: usize,
    ranges: &InitRanges,
    master_seed: u64,
) -> Result<Vec<Path>, AnnealError> {
    let d = model.dimension();
    if ranges.states.len() != d || ranges.params.len() != model.parameter_count() {
        return Err(AnnealError::Config("init ranges do not cover the model".into()));
    }
    if obs.steps().last().is_some_and(|&s| s > window_steps) || obs.components().iter().any(|&c| c >= d) {
        return Err(AnnealError::Config("observations fall outside the window".into()));
    }
    (0..n_paths)
        .map(|q| {
            (0..INIT_RETRIES)
                .find_map(|attempt| {
                    let mut rng = stream(master_seed, Role::InitPath, q as u64, attempt);
                    init_path(obs, model, window_steps, ranges, &mut rng)
                })
                .ok_or(AnnealError::InitOverflow { q })
        })
        .collect()
}

fn init_path(
    obs: &ObservationSet,
    model: &dyn Model,
    window_steps: usize,
    ranges: &InitRanges,
    rng: &mut ChaCha8Rng,
) -> Option<Path> {
    let d = model.dimension();
    let mut states = Trajectory::zeros(window_steps + 1, d);
    for (a, r) in ranges.states.iter().enumerate() {
        states.set(0, a, r.draw(rng));
    }
    let params: Vec<f64> = ranges.params.iter().map(|r| r.draw(rng)).collect();
    let pin = |states: &mut Trajectory, n: usize| {
        if let Some(k) = obs.step_row(n) {
            for (l, &a) in obs.components().iter().enumerate() {
                states.set(n, a, obs.value(k, l));
            }
        }
    };
    let mut next = vec![0.0; d];
    for n in 0..window_steps {
        pin(&mut states, n);
        model.step_into(states.row(n), &params, &mut next).ok()?;
        states.row_mut(n + 1).copy_from_slice(&next);
    }
    for &n in obs.steps() {
        pin(&mut states, n);
    }
    Path::new(states, params).ok()
}

/// Chain settings that take effect from `from_beta` onward. Unset fields keep the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainOverride {
    pub from_beta: usize,
    pub burn_in_sweeps: Option<usize>,
    pub sample_sweeps: Option<usize>,
    /// Resets the carried state step at `from_beta`.
    pub initial_step: Option<f64>,
    /// Resets the carried parameter step at `from_beta`.
    pub param_step: Option<f64>,
    pub adapt_block: Option<usize>,
    pub adapt_factor: Option<f64>,
}

/// Base chain settings plus per-rung overrides.
///
/// Rung 0 starts from the configured step sizes. Every later rung starts from the step
/// sizes that chain `q` ended the previous rung with, unless an override starting at that
/// rung resets them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainPlan {
    pub base: ChainConfig,
    pub overrides: Vec<ChainOverride>,
}

impl ChainPlan {
    pub fn uniform(base: ChainConfig) -> Self {
        Self {
            base,
            overrides: Vec::new(),
        }
    }

    /// Effective settings at `beta`; later overrides win.
    pub fn config_for(&self, beta: usize) -> ChainConfig {
        let mut cfg = self.base.clone();
        let mut sorted: Vec<&ChainOverride> = self.overrides.iter().filter(|o| o.from_beta <= beta).collect();
        sorted.sort_by_key(|o| o.from_beta);
        for o in sorted {
            cfg.burn_in_sweeps = o.burn_in_sweeps.unwrap_or(cfg.burn_in_sweeps);
            cfg.sample_sweeps = o.sample_sweeps.unwrap_or(cfg.sample_sweeps);
            cfg.initial_step = o.initial_step.unwrap_or(cfg.initial_step);
            cfg.param_step = o.param_step.unwrap_or(cfg.param_step);
            cfg.adapt_block = o.adapt_block.unwrap_or(cfg.adapt_block);
            cfg.adapt_factor = o.adapt_factor.unwrap_or(cfg.adapt_factor);
        }
        cfg
    }

    fn resets_steps_at(&self, beta: usize) -> bool {
        self.overrides
            .iter()
            .any(|o| o.from_beta == beta && (o.initial_step.is_some() || o.param_step.is_some()))
    }
}

/// One `(q, beta)` result: the action of the expected path and its parameter estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub beta: usize,
    pub q: usize,
    pub r_f: f64,
    pub action: ActionBreakdown,
    pub params: Vec<f64>,
    pub acceptance_rate: f64,
    pub n_accepted: usize,
    pub final_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schedule: AnnealSchedule,
    /// Ordered by beta, then q.
    pub rows: Vec<RunRow>,
    /// The `N_I` expected paths of the last completed rung.
    pub final_paths: Vec<Path>,
}

/// Whether the minimum action over paths has stopped moving across the last rungs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub window: usize,
    /// `(max - min) / min` of the per-rung minimum action over the window.
    pub relative_change: f64,
    pub threshold: f64,
    pub reached: bool,
}

impl RunRecord {
    pub fn rows_at(&self, beta: usize) -> impl Iterator<Item = &RunRow> {
        self.rows.iter().filter(move |r| r.beta == beta)
    }

    /// Highest rung with rows.
    pub fn last_beta(&self) -> Option<usize> {
        self.rows.last().map(|r| r.beta)
    }

    /// Row with the smallest total action at `beta`.
    pub fn min_action_row(&self, beta: usize) -> Option<&RunRow> {
        self.rows_at(beta)
            .min_by(|a, b| a.action.total.total_cmp(&b.action.total))
    }

    /// Index and path of the lowest-action final expected path.
    pub fn min_action_path(&self) -> Option<(usize, &Path)> {
        let row = self.min_action_row(self.last_beta()?)?;
        self.final_paths.get(row.q).map(|p| (row.q, p))
    }

    /// Coordinate-wise mean of the final expected paths.
    pub fn mean_path(&self) -> Option<Path> {
        let first = self.final_paths.first()?;
        let n = self.final_paths.len() as f64;
        let mut out = first.clone();
        let total = first.states.as_flat().len();
        for i in 0..total {
            out.states.as_flat_mut()[i] = self.final_paths.iter().map(|p| p.states.as_flat()[i]).sum::<f64>() / n;
        }
        for j in 0..first.params.len() {
            out.params[j] = expected_value(self, |p| p.params[j]);
        }
        Some(out)
    }

    pub fn plateau(&self, window: usize, threshold: f64) -> Option<Plateau> {
        let last = self.last_beta()?;
        let first = last.saturating_sub(window);
        let mins: Vec<f64> = (first..=last)
            .filter_map(|b| self.min_action_row(b).map(|r| r.action.total))
            .collect();
        let lo = mins.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = mins.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let relative_change = if lo > 0.0 { (hi - lo) / lo } else { f64::INFINITY };
        Some(Plateau {
            window,
            relative_change,
            threshold,
            reached: relative_change < threshold,
        })
    }
}

/// `<G(X)> = (1/N_I) sum_q G(Xbar^q)` over the final expected paths.
pub fn expected_value(record: &RunRecord, g: impl Fn(&Path) -> f64) -> f64 {
    let n = record.final_paths.len() as f64;
    record.final_paths.iter().map(g).sum::<f64>() / n
}

/// Hooks into a running anneal. Calls may arrive from worker threads.
pub trait AnnealObserver: Sync {
    fn chain_started(&self, _q: usize, _beta: usize, _init: &Path) {}
    fn rung_finished(&self, _beta: usize, _rows: &[RunRow]) {}
}

impl AnnealObserver for () {}

/// The data and model being assimilated over a window of `window_steps` transitions.
#[derive(Clone, Copy)]
pub struct Problem<'a> {
    pub obs: &'a ObservationSet,
    pub model: &'a dyn Model,
    pub window_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PamcSettings {
    pub schedule: AnnealSchedule,
    pub chains: ChainPlan,
    pub ranges: InitRanges,
    pub master_seed: u64,
    /// Worker threads per rung; results do not depend on this.
    pub threads: usize,
}

pub fn pamc_run(problem: Problem<'_>, settings: &PamcSettings) -> Result<RunRecord, AnnealError> {
    pamc_run_observed(problem, settings, &())
}

pub fn pamc_run_observed(
    problem: Problem<'_>,
    settings: &PamcSettings,
    observer: &dyn AnnealObserver,
) -> Result<RunRecord, AnnealError> {
    let schedule = settings.schedule;
    schedule.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.threads.max(1))
        .build()
        .map_err(|e| AnnealError::ThreadPool(e.to_string()))?;

    let mut paths = init_paths(
        problem.obs,
        problem.model,
        problem.window_steps,
        schedule.n_paths,
        &settings.ranges,
        settings.master_seed,
    )?;
    let mut steps: Vec<Option<StepScales>> = vec![None; schedule.n_paths];
    let mut record = RunRecord {
        schedule,
        rows: Vec::with_capacity(schedule.n_paths * (schedule.beta_max + 1)),
        final_paths: Vec::new(),
    };

    for beta in 0..=schedule.beta_max {
        let r_f = schedule.r_f(beta);
        let base = settings.chains.config_for(beta);
        base.validate().map_err(|e| AnnealError::Config(e.to_string()))?;
        let reset = beta == 0 || settings.chains.resets_steps_at(beta);

        let results: Vec<Result<ChainResult, SamplerError>> = pool.install(|| {
            (0..schedule.n_paths)
                .into_par_iter()
                .map(|q| {
                    let init = &paths[q];
                    observer.chain_started(q, beta, init);
                    let cfg = ChainConfig {
                        rng_seed: derive_seed(settings.master_seed, Role::Chain, q as u64, beta as u64),
                        ..base.clone()
                    };
                    let start = match (&steps[q], reset) {
                        (Some(s), false) => s.clone(),
                        _ => StepScales::from_config(&cfg, init),
                    };
                    run_chain_from(init, problem.obs, problem.model, r_f, &cfg, start, &mut |_| {})
                })
                .collect()
        });

        let mut rung = Vec::with_capacity(schedule.n_paths);
        for (q, res) in results.into_iter().enumerate() {
            match res {
                Ok(r) => rung.push(r),
                Err(source) => {
                    record.final_paths = paths;
                    return Err(AnnealError::Chain {
                        q,
                        beta,
                        source,
                        partial: Box::new(record),
                    });
                }
            }
        }
        let first_row = record.rows.len();
        for (q, r) in rung.iter().enumerate() {
            record.rows.push(RunRow {
                beta,
                q,
                r_f,
                action: r.action_at_mean,
                params: r.expected_path.params.clone(),
                acceptance_rate: r.acceptance_rate,
                n_accepted: r.n_accepted,
                final_step: r.final_step,
            });
        }
        observer.rung_finished(beta, &record.rows[first_row..]);
        for (q, r) in rung.into_iter().enumerate() {
            paths[q] = r.expected_path;
            steps[q] = Some(r.final_steps);
        }
    }
    record.final_paths = paths;
    Ok(record)
}

/// Action of `path` at every rung of `schedule`, without sampling.
pub fn action_ladder(
    path: &Path,
    obs: &ObservationSet,
    model: &dyn Model,
    schedule: &AnnealSchedule,
) -> Result<Vec<ActionBreakdown>, ActionError> {
    (0..=schedule.beta_max)
        .map(|b| action(path, obs, model, schedule.r_f(b)))
        .collect()
}
