//! Twin experiments: synthetic truth from the model itself, noisy partial observations,
//! forward prediction past the window, and scoring against the stored truth.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{ObservationError, ObservationSet};
use crate::dynamics::{integrate, DynamicsError, Lorenz96, Model, StateVector, Trajectory};
use crate::seeding::{stream, Role};

/// Initial-condition redraws allowed when the spin-up overflows.
pub const SPIN_UP_RETRIES: u64 = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TwinError {
    #[error("invalid twin configuration: {0}")]
    Config(String),
    #[error("spin-up overflowed on every initial condition")]
    SpinUp,
    #[error("trajectory shapes differ: {0:?} vs {1:?}")]
    Shape((usize, usize), (usize, usize)),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Observation(#[from] ObservationError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwinConfig {
    pub dimension: usize,
    pub nu_true: f64,
    pub dt: f64,
    /// Transitions `N` in the observation window; the window holds `N + 1` states.
    pub window_steps: usize,
    /// Steps between measurement times.
    pub n_tau: usize,
    /// Observed components, 0-based.
    pub obs_components: Vec<usize>,
    /// Observation noise standard deviation.
    pub sigma: f64,
    pub r_m: f64,
    pub prediction_steps: usize,
    /// Spin-up steps discarded before the window opens.
    pub transient_steps: usize,
}

impl TwinConfig {
    /// Lorenz96 with `D = 20`, twelve observed components, a window of `[0, 5]` observed
    /// at every step, and prediction out to `t = 10`.
    pub fn lorenz96_d20(sigma: f64) -> Self {
        Self {
            dimension: 20,
            nu_true: 8.17,
            dt: 0.025,
            window_steps: 200,
            n_tau: 1,
            obs_components: [1, 2, 4, 6, 7, 9, 11, 12, 14, 16, 17, 19]
                .iter()
                .map(|a| a - 1)
                .collect(),
            sigma,
            r_m: 1.0,
            prediction_steps: 200,
            transient_steps: 2000,
        }
    }

    pub fn validate(&self) -> Result<(), TwinError> {
        let fail = |m: &str| Err(TwinError::Config(m.to_string()));
        if self.n_tau < 1 {
            return fail("n_tau must be at least 1");
        }
        if self.obs_components.is_empty() || self.obs_components.iter().any(|&c| c >= self.dimension) {
            return fail("observed components must be non-empty and below the dimension");
        }
        let mut sorted = self.obs_components.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return fail("observed components must be distinct");
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return fail("sigma must be finite and non-negative");
        }
        Ok(())
    }

    pub fn model(&self) -> Result<Lorenz96, TwinError> {
        Ok(Lorenz96::new(self.dimension, self.dt)?)
    }

    /// Measurement steps `0, n_tau, 2 n_tau, ... <= N`.
    pub fn observation_steps(&self) -> Vec<usize> {
        (0..=self.window_steps).step_by(self.n_tau).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwinData {
    /// `N + prediction_steps + 1` true states, starting at the window's first step.
    pub truth: Trajectory,
    pub nu_true: f64,
    pub window_steps: usize,
    pub observations: ObservationSet,
    /// `y - x` at every observed site, in [`ObservationSet::entries`] order.
    pub noise: Vec<f64>,
}

impl TwinData {
    pub fn window_truth(&self) -> Trajectory {
        self.truth.slice(0, self.window_steps + 1)
    }

    /// True states from `t_F` to the end of the prediction horizon.
    pub fn prediction_truth(&self) -> Trajectory {
        self.truth.slice(self.window_steps, self.truth.len())
    }
}

/// Spins up from a random state near the fixed point, then records the window and the
/// prediction horizon and adds `sigma * N(0, 1)` noise at the observed window sites.
pub fn generate_twin(cfg: &TwinConfig, master_seed: u64) -> Result<TwinData, TwinError> {
    cfg.validate()?;
    let model = cfg.model()?;
    let params = [cfg.nu_true];
    let total = cfg.window_steps + cfg.prediction_steps;

    let truth = (0..SPIN_UP_RETRIES)
        .find_map(|attempt| {
            let mut rng = stream(master_seed, Role::TwinInitialCondition, attempt, 0);
            let x0: Vec<f64> = (0..cfg.dimension)
                .map(|_| cfg.nu_true + rng.sample::<f64, _>(StandardNormal))
                .collect();
            let x0 = StateVector::new(x0).ok()?;
            let spun = integrate(&model, &x0, &params, cfg.transient_steps).ok()?;
            integrate(&model, &spun.state(cfg.transient_steps), &params, total).ok()
        })
        .ok_or(TwinError::SpinUp)?;

    let mut rng = stream(master_seed, Role::TwinNoise, 0, 0);
    let steps = cfg.observation_steps();
    let mut values = Vec::with_capacity(steps.len() * cfg.obs_components.len());
    let mut noise = Vec::with_capacity(values.capacity());
    for &n in &steps {
        for &a in &cfg.obs_components {
            let x = truth.get(n, a);
            let y = x + cfg.sigma * rng.sample::<f64, _>(StandardNormal);
            values.push(y);
            noise.push(y - x);
        }
    }
    let observations = ObservationSet::new(steps, cfg.obs_components.clone(), values, cfg.r_m)?;
    Ok(TwinData {
        truth,
        nu_true: cfg.nu_true,
        window_steps: cfg.window_steps,
        observations,
        noise,
    })
}

/// Free forward run from the estimated final state with estimated parameters.
pub fn predict(
    model: &dyn Model,
    x_final: &StateVector,
    params: &[f64],
    n_steps: usize,
) -> Result<Trajectory, DynamicsError> {
    integrate(model, x_final, params, n_steps)
}

pub fn rmse(a: &Trajectory, b: &Trajectory) -> Result<f64, TwinError> {
    if a.len() != b.len() || a.dimension() != b.dimension() {
        return Err(TwinError::Shape((a.len(), a.dimension()), (b.len(), b.dimension())));
    }
    let n = a.as_flat().len();
    if n == 0 {
        return Ok(0.0);
    }
    let ss: f64 = a
        .as_flat()
        .iter()
        .zip(b.as_flat())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok((ss / n as f64).sqrt())
}

/// First row at which `|a - b|` in `component` exceeds `threshold`.
pub fn divergence_step(a: &Trajectory, b: &Trajectory, component: usize, threshold: f64) -> Option<usize> {
    (0..a.len().min(b.len())).find(|&n| (a.get(n, component) - b.get(n, component)).abs() > threshold)
}
