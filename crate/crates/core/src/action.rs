//! The standard-model action: Gaussian measurement error plus Gaussian model error.
//!
//! ```text
//! A(X) = sum_{n, l} (R_m/2) (y_l(n) - x_l(n))^2  +  (R_f/2) sum_{n<N, a} (x_a(n+1) - f_a(x(n), p))^2
//! ```
//!
//! Sums run in ascending `n`, then ascending component, so repeated evaluations are
//! bit-identical.

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;
use thiserror::Error;

use crate::dynamics::{DynamicsError, Model, Trajectory};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ActionError {
    #[error("path has dimension {found}, model expects {expected}")]
    StateDimension { expected: usize, found: usize },
    #[error("path carries {found} parameters, model expects {expected}")]
    ParameterCount { expected: usize, found: usize },
    #[error("observation at step {step} lies outside the path (last step {last})")]
    ObservationStep { step: usize, last: usize },
    #[error("observed component {component} is outside the state dimension {dimension}")]
    ObservationComponent { component: usize, dimension: usize },
    #[error("invalid site {0:?}")]
    InvalidSite(Site),
    #[error("model precision R_f must be finite and non-negative, got {0}")]
    NegativePrecision(f64),
    #[error("path contains a non-finite value")]
    NonFinitePath,
    #[error(transparent)]
    Model(#[from] DynamicsError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ObservationError {
    #[error("observation steps must be strictly increasing")]
    UnsortedSteps,
    #[error("observed components must be distinct")]
    DuplicateComponent,
    #[error("expected {expected} observed values, got {found}")]
    ValueCount { expected: usize, found: usize },
    #[error("observed value is not finite")]
    NonFinite,
    #[error("measurement precision R_m must be positive and finite, got {0}")]
    Precision(f64),
    #[error("observation entries do not form a complete step x component grid")]
    IncompleteGrid,
    #[error("no observations")]
    Empty,
}

/// A model path over the window: `N + 1` states of dimension `D` plus `N_p` static parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub states: Trajectory,
    pub params: Vec<f64>,
}

impl Path {
    pub fn new(states: Trajectory, params: Vec<f64>) -> Result<Self, ActionError> {
        let path = Self { states, params };
        if path.is_finite() {
            Ok(path)
        } else {
            Err(ActionError::NonFinitePath)
        }
    }

    /// Number of transitions `N`; the path has `N + 1` states.
    pub fn steps(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    pub fn dimension(&self) -> usize {
        self.states.dimension()
    }

    /// `(N + 1) D + N_p`, the number of sampled coordinates.
    pub fn total_dimension(&self) -> usize {
        self.states.as_flat().len() + self.params.len()
    }

    pub fn is_finite(&self) -> bool {
        self.states.as_flat().iter().chain(&self.params).all(|v| v.is_finite())
    }

    pub fn get(&self, site: Site) -> f64 {
        match site {
            Site::State { step, component } => self.states.get(step, component),
            Site::Param(j) => self.params[j],
        }
    }

    pub fn set(&mut self, site: Site, value: f64) {
        match site {
            Site::State { step, component } => self.states.set(step, component, value),
            Site::Param(j) => self.params[j] = value,
        }
    }

    pub fn contains(&self, site: Site) -> bool {
        match site {
            Site::State { step, component } => step < self.states.len() && component < self.dimension(),
            Site::Param(j) => j < self.params.len(),
        }
    }

    fn check_model(&self, model: &dyn Model) -> Result<(), ActionError> {
        if self.dimension() != model.dimension() {
            return Err(ActionError::StateDimension {
                expected: model.dimension(),
                found: self.dimension(),
            });
        }
        if self.params.len() != model.parameter_count() {
            return Err(ActionError::ParameterCount {
                expected: model.parameter_count(),
                found: self.params.len(),
            });
        }
        Ok(())
    }
}

/// A single path coordinate: a state component at a time step, or a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Site {
    State { step: usize, component: usize },
    Param(usize),
}

/// Noisy measurements `y_l(tau_k)` of `L` components at `F` time steps, all at precision `R_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    steps: Vec<usize>,
    components: Vec<usize>,
    /// `F x L`, row per observation step.
    values: Vec<f64>,
    r_m: f64,
    component_slot: Vec<Option<usize>>,
}

impl ObservationSet {
    pub fn new(
        steps: Vec<usize>,
        components: Vec<usize>,
        values: Vec<f64>,
        r_m: f64,
    ) -> Result<Self, ObservationError> {
        if steps.is_empty() || components.is_empty() {
            return Err(ObservationError::Empty);
        }
        if steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ObservationError::UnsortedSteps);
        }
        let mut seen = components.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(ObservationError::DuplicateComponent);
        }
        if values.len() != steps.len() * components.len() {
            return Err(ObservationError::ValueCount {
                expected: steps.len() * components.len(),
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ObservationError::NonFinite);
        }
        if !(r_m > 0.0 && r_m.is_finite()) {
            return Err(ObservationError::Precision(r_m));
        }
        let mut set = Self {
            steps,
            components,
            values,
            r_m,
            component_slot: Vec::new(),
        };
        set.rebuild_slots();
        Ok(set)
    }

    /// Builds a set from `(step, component, value)` triples in any order. The triples must
    /// cover the same component list at every step. Steps and components are sorted.
    pub fn from_entries(
        entries: impl IntoIterator<Item = (usize, usize, f64)>,
        r_m: f64,
    ) -> Result<Self, ObservationError> {
        let mut entries: Vec<_> = entries.into_iter().collect();
        entries.sort_by_key(|e| (e.0, e.1));
        let mut steps: Vec<usize> = entries.iter().map(|e| e.0).collect();
        steps.dedup();
        let mut components: Vec<usize> = entries.iter().map(|e| e.1).collect();
        components.sort_unstable();
        components.dedup();
        if entries.len() != steps.len() * components.len() {
            return Err(ObservationError::IncompleteGrid);
        }
        for (i, e) in entries.iter().enumerate() {
            if e.0 != steps[i / components.len()] || e.1 != components[i % components.len()] {
                return Err(ObservationError::IncompleteGrid);
            }
        }
        let values = entries.iter().map(|e| e.2).collect();
        Self::new(steps, components, values, r_m)
    }

    fn rebuild_slots(&mut self) {
        let width = self.components.iter().max().map_or(0, |m| m + 1);
        self.component_slot = vec![None; width];
        for (l, &c) in self.components.iter().enumerate() {
            self.component_slot[c] = Some(l);
        }
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    /// Observed components, 0-based.
    pub fn components(&self) -> &[usize] {
        &self.components
    }

    pub fn r_m(&self) -> f64 {
        self.r_m
    }

    /// `y` at observation row `k`, component slot `l`.
    pub fn value(&self, k: usize, l: usize) -> f64 {
        self.values[k * self.components.len() + l]
    }

    /// The `L` observed values at observation row `k`.
    pub fn row(&self, k: usize) -> &[f64] {
        let l = self.components.len();
        &self.values[k * l..(k + 1) * l]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Row index of step `n`, if it carries a measurement.
    pub fn step_row(&self, n: usize) -> Option<usize> {
        self.steps.binary_search(&n).ok()
    }

    /// Slot of component `a` in [`ObservationSet::components`], if it is observed.
    pub fn component_slot(&self, a: usize) -> Option<usize> {
        self.component_slot.get(a).copied().flatten()
    }

    /// Measured value at `(n, a)`, if that site is observed.
    pub fn observed(&self, n: usize, a: usize) -> Option<f64> {
        let k = self.step_row(n)?;
        let l = self.component_slot(a)?;
        Some(self.value(k, l))
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.steps.iter().enumerate().flat_map(move |(k, &n)| {
            self.components
                .iter()
                .enumerate()
                .map(move |(l, &a)| (n, a, self.value(k, l)))
        })
    }

    pub fn check_path(&self, path: &Path) -> Result<(), ActionError> {
        let last = path.steps();
        if let Some(&step) = self.steps.last().filter(|&&s| s > last) {
            return Err(ActionError::ObservationStep { step, last });
        }
        if let Some(&component) = self.components.iter().find(|&&c| c >= path.dimension()) {
            return Err(ActionError::ObservationComponent {
                component,
                dimension: path.dimension(),
            });
        }
        Ok(())
    }
}

/// The two terms of the action and their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionBreakdown {
    pub measurement_error: f64,
    pub model_error: f64,
    pub total: f64,
}

impl ActionBreakdown {
    pub fn new(measurement_error: f64, model_error: f64) -> Self {
        Self {
            measurement_error,
            model_error,
            total: measurement_error + model_error,
        }
    }
}

pub fn measurement_error(path: &Path, obs: &ObservationSet) -> Result<f64, ActionError> {
    obs.check_path(path)?;
    let half = 0.5 * obs.r_m;
    let mut sum = 0.0;
    for (k, &n) in obs.steps.iter().enumerate() {
        let x = path.states.row(n);
        for (l, &a) in obs.components.iter().enumerate() {
            let r = obs.value(k, l) - x[a];
            sum += half * r * r;
        }
    }
    Ok(sum)
}

pub fn model_error(path: &Path, model: &dyn Model, r_f: f64) -> Result<f64, ActionError> {
    check_precision(r_f)?;
    path.check_model(model)?;
    if r_f == 0.0 {
        return Ok(0.0);
    }
    let mut f = vec![0.0; path.dimension()];
    let mut sum = 0.0;
    for n in 0..path.steps() {
        model.step_into(path.states.row(n), &path.params, &mut f)?;
        sum += squared_residual(path.states.row(n + 1), &f);
    }
    Ok(0.5 * r_f * sum)
}

pub fn action(path: &Path, obs: &ObservationSet, model: &dyn Model, r_f: f64) -> Result<ActionBreakdown, ActionError> {
    Ok(ActionBreakdown::new(
        measurement_error(path, obs)?,
        model_error(path, model, r_f)?,
    ))
}

/// `A(path with site set to new_value) - A(path)`, touching only the affected terms.
///
/// A state change at `(n, a)` touches the `a`-th residual of transition `n-1 -> n`, all
/// residuals of `n -> n+1`, and the measurement at `(n, a)` if observed. A parameter
/// change touches every transition. Returns `+inf` if the proposed value makes the map
/// overflow.
pub fn delta_action(
    path: &Path,
    site: Site,
    new_value: f64,
    obs: &ObservationSet,
    model: &dyn Model,
    r_f: f64,
) -> Result<f64, ActionError> {
    check_precision(r_f)?;
    path.check_model(model)?;
    if !path.contains(site) {
        return Err(ActionError::InvalidSite(site));
    }
    let current = path.get(site);
    if new_value == current {
        return Ok(0.0);
    }
    match site {
        Site::State { step, component } => {
            let mut delta = 0.0;
            if r_f > 0.0 {
                let d = path.dimension();
                let mut f: SmallVec<[f64; 32]> = smallvec::smallvec![0.0; d];
                if step > 0 {
                    model.step_into(path.states.row(step - 1), &path.params, &mut f)?;
                    delta += transition_change_one(current, new_value, f[component], r_f);
                }
                if step < path.steps() {
                    model.step_into(path.states.row(step), &path.params, &mut f)?;
                    let old = squared_residual(path.states.row(step + 1), &f);
                    let mut moved: SmallVec<[f64; 32]> = path.states.row(step).into();
                    moved[component] = new_value;
                    if model.step_into(&moved, &path.params, &mut f).is_err() {
                        return Ok(f64::INFINITY);
                    }
                    let new = squared_residual(path.states.row(step + 1), &f);
                    delta += 0.5 * r_f * (new - old);
                }
            }
            Ok(delta + measurement_change(obs, step, component, current, new_value))
        }
        Site::Param(j) => {
            if r_f == 0.0 {
                return Ok(0.0);
            }
            let mut moved = path.params.clone();
            moved[j] = new_value;
            let d = path.dimension();
            let mut f_old = vec![0.0; d];
            let mut f_new = vec![0.0; d];
            let (mut old, mut new) = (0.0, 0.0);
            for n in 0..path.steps() {
                model.step_into(path.states.row(n), &path.params, &mut f_old)?;
                if model.step_into(path.states.row(n), &moved, &mut f_new).is_err() {
                    return Ok(f64::INFINITY);
                }
                old += squared_residual(path.states.row(n + 1), &f_old);
                new += squared_residual(path.states.row(n + 1), &f_new);
            }
            Ok(0.5 * r_f * (new - old))
        }
    }
}

/// Cached one-step forecasts `f(x(n), p)` for `n = 0..N-1`, so a state proposal costs one
/// map evaluation instead of three.
///
/// [`ForecastCache::delta`] stages the forecasts implied by a proposal and
/// [`ForecastCache::commit`] adopts them once the proposal is accepted.
#[derive(Debug, Clone)]
pub struct ForecastCache {
    forecasts: Trajectory,
    staged_row: Vec<f64>,
    staged_all: Trajectory,
}

impl ForecastCache {
    pub fn new(path: &Path, model: &dyn Model) -> Result<Self, ActionError> {
        path.check_model(model)?;
        let d = path.dimension();
        let mut forecasts = Trajectory::zeros(path.steps(), d);
        for n in 0..path.steps() {
            model.step_into(path.states.row(n), &path.params, forecasts.row_mut(n))?;
        }
        Ok(Self {
            staged_all: forecasts.clone(),
            staged_row: vec![0.0; d],
            forecasts,
        })
    }

    pub fn forecasts(&self) -> &Trajectory {
        &self.forecasts
    }

    /// Same contract as [`delta_action`] for a path whose forecasts this cache holds.
    /// `r_f` must be positive. The site is not bounds-checked.
    pub fn delta(
        &mut self,
        path: &Path,
        site: Site,
        new_value: f64,
        obs: &ObservationSet,
        model: &dyn Model,
        r_f: f64,
    ) -> f64 {
        let current = path.get(site);
        match site {
            Site::State { step, component } => {
                let mut delta = 0.0;
                if step > 0 {
                    let fa = self.forecasts.get(step - 1, component);
                    delta += transition_change_one(current, new_value, fa, r_f);
                }
                if step < path.steps() {
                    let mut moved: SmallVec<[f64; 32]> = path.states.row(step).into();
                    moved[component] = new_value;
                    if model.step_into(&moved, &path.params, &mut self.staged_row).is_err() {
                        return f64::INFINITY;
                    }
                    let next = path.states.row(step + 1);
                    let old = squared_residual(next, self.forecasts.row(step));
                    let new = squared_residual(next, &self.staged_row);
                    delta += 0.5 * r_f * (new - old);
                }
                delta + measurement_change(obs, step, component, current, new_value)
            }
            Site::Param(j) => {
                let mut moved = path.params.clone();
                moved[j] = new_value;
                let (mut old, mut new) = (0.0, 0.0);
                for n in 0..path.steps() {
                    if model
                        .step_into(path.states.row(n), &moved, self.staged_all.row_mut(n))
                        .is_err()
                    {
                        return f64::INFINITY;
                    }
                    let next = path.states.row(n + 1);
                    old += squared_residual(next, self.forecasts.row(n));
                    new += squared_residual(next, self.staged_all.row(n));
                }
                0.5 * r_f * (new - old)
            }
        }
    }

    /// Adopts the forecasts staged by the last [`ForecastCache::delta`] call for `site`.
    pub fn commit(&mut self, path: &Path, site: Site) {
        match site {
            Site::State { step, .. } => {
                if step < path.steps() {
                    self.forecasts.row_mut(step).copy_from_slice(&self.staged_row);
                }
            }
            Site::Param(_) => std::mem::swap(&mut self.forecasts, &mut self.staged_all),
        }
    }
}

fn check_precision(r_f: f64) -> Result<(), ActionError> {
    if r_f >= 0.0 && r_f.is_finite() {
        Ok(())
    } else {
        Err(ActionError::NegativePrecision(r_f))
    }
}

#[inline]
fn squared_residual(next: &[f64], forecast: &[f64]) -> f64 {
    next.iter()
        .zip(forecast)
        .map(|(x, f)| {
            let r = x - f;
            r * r
        })
        .sum()
}

#[inline]
fn transition_change_one(current: f64, new_value: f64, forecast: f64, r_f: f64) -> f64 {
    let (old, new) = (current - forecast, new_value - forecast);
    0.5 * r_f * (new * new - old * old)
}

#[inline]
fn measurement_change(obs: &ObservationSet, n: usize, a: usize, current: f64, new_value: f64) -> f64 {
    match obs.observed(n, a) {
        Some(y) => {
            let (old, new) = (y - current, y - new_value);
            0.5 * obs.r_m * (new * new - old * old)
        }
        None => 0.0,
    }
}
