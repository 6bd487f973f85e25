//! Discrete-time dynamical models.
//!
//! The action consumes a model only through its one-step map `x(n+1) = f(x(n), p)`.
//! Lorenz96 defines that map by a classic RK4 step of its vector field; other
//! models (such as [`LinearMap`]) provide the map directly.

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;
use thiserror::Error;

/// Scratch buffers for the RK4 stages live on the stack up to this dimension.
const INLINE_DIM: usize = 32;

type Buf = SmallVec<[f64; INLINE_DIM]>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("Lorenz96 needs at least 4 components, got {0}")]
    DimensionTooSmall(usize),
    #[error("state has {found} components, model expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("model expects {expected} parameters, got {found}")]
    ParameterMismatch { expected: usize, found: usize },
    #[error("time step must be positive and finite, got {0}")]
    InvalidTimeStep(f64),
    #[error("non-finite state component at index {0}")]
    NonFiniteState(usize),
    #[error("numerical overflow in one-step map")]
    Overflow,
    #[error("numerical overflow at integration step {step}")]
    OverflowAtStep { step: usize },
}

/// A model state `x(t)`: `D` finite real components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct StateVector(Vec<f64>);

impl StateVector {
    pub fn new(components: Vec<f64>) -> Result<Self, DynamicsError> {
        if components.is_empty() {
            return Err(DynamicsError::DimensionMismatch { expected: 1, found: 0 });
        }
        if let Some(i) = components.iter().position(|v| !v.is_finite()) {
            return Err(DynamicsError::NonFiniteState(i));
        }
        Ok(Self(components))
    }

    /// Constant state `(value, ..., value)`.
    pub fn filled(dimension: usize, value: f64) -> Result<Self, DynamicsError> {
        Self::new(vec![value; dimension])
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for StateVector {
    type Error = DynamicsError;

    fn try_from(value: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<StateVector> for Vec<f64> {
    fn from(value: StateVector) -> Self {
        value.0
    }
}

impl std::ops::Index<usize> for StateVector {
    type Output = f64;

    fn index(&self, index: usize) -> &f64 {
        &self.0[index]
    }
}

/// A discrete-time model `x(n+1) = f(x(n), p)` with `D` states and `N_p` parameters.
///
/// Implementations must be deterministic: identical inputs give bit-identical outputs.
pub trait Model: Send + Sync {
    fn dimension(&self) -> usize;

    fn parameter_count(&self) -> usize;

    /// Time between consecutive path points, in model time units.
    fn dt(&self) -> f64;

    /// Writes `f(x, params)` into `out`. Returns [`DynamicsError::Overflow`] if the
    /// result is not finite. Callers guarantee slice lengths.
    fn step_into(&self, x: &[f64], params: &[f64], out: &mut [f64]) -> Result<(), DynamicsError>;

    /// Checked version of [`Model::step_into`] over owned states.
    fn step(&self, x: &StateVector, params: &[f64]) -> Result<StateVector, DynamicsError> {
        self.check_inputs(x.as_slice(), params)?;
        let mut out = vec![0.0; self.dimension()];
        self.step_into(x.as_slice(), params, &mut out)?;
        Ok(StateVector(out))
    }

    fn check_inputs(&self, x: &[f64], params: &[f64]) -> Result<(), DynamicsError> {
        if x.len() != self.dimension() {
            return Err(DynamicsError::DimensionMismatch {
                expected: self.dimension(),
                found: x.len(),
            });
        }
        if params.len() != self.parameter_count() {
            return Err(DynamicsError::ParameterMismatch {
                expected: self.parameter_count(),
                found: params.len(),
            });
        }
        Ok(())
    }
}

/// Lorenz96 tendency `F_a = x_{a-1}(x_{a+1} - x_{a-2}) - x_a + nu` with cyclic indices.
///
/// `x.len() >= 4` and `out.len() == x.len()` are the caller's responsibility.
#[inline]
pub fn lorenz96_tendency(x: &[f64], nu: f64, out: &mut [f64]) {
    let d = x.len();
    debug_assert!(d >= 4 && out.len() == d);
    out[0] = x[d - 1] * (x[1] - x[d - 2]) - x[0] + nu;
    out[1] = x[0] * (x[2] - x[d - 1]) - x[1] + nu;
    for a in 2..d - 1 {
        out[a] = x[a - 1] * (x[a + 1] - x[a - 2]) - x[a] + nu;
    }
    out[d - 1] = x[d - 2] * (x[0] - x[d - 3]) - x[d - 1] + nu;
}

/// Checked Lorenz96 vector field over a [`StateVector`].
pub fn lorenz96_vector_field(x: &StateVector, nu: f64) -> Result<StateVector, DynamicsError> {
    if x.dimension() < 4 {
        return Err(DynamicsError::DimensionTooSmall(x.dimension()));
    }
    let mut out = vec![0.0; x.dimension()];
    lorenz96_tendency(x.as_slice(), nu, &mut out);
    Ok(StateVector(out))
}

/// One classic fourth-order Runge-Kutta step of `dx/dt = field(x)`, written into `out`.
pub fn rk4_step<F>(field: F, x: &[f64], dt: f64, out: &mut [f64]) -> Result<(), DynamicsError>
where
    F: Fn(&[f64], &mut [f64]),
{
    let d = x.len();
    let zeros = || -> Buf { smallvec::smallvec![0.0; d] };
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (zeros(), zeros(), zeros(), zeros(), zeros());
    let half = 0.5 * dt;

    field(x, &mut k1);
    for i in 0..d {
        tmp[i] = x[i] + half * k1[i];
    }
    field(&tmp, &mut k2);
    for i in 0..d {
        tmp[i] = x[i] + half * k2[i];
    }
    field(&tmp, &mut k3);
    for i in 0..d {
        tmp[i] = x[i] + dt * k3[i];
    }
    field(&tmp, &mut k4);

    let sixth = dt / 6.0;
    for i in 0..d {
        out[i] = x[i] + sixth * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    if out[..d].iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(DynamicsError::Overflow)
    }
}

/// Lorenz96 discretized with RK4. The only parameter is the forcing `nu`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lorenz96 {
    dimension: usize,
    dt: f64,
}

impl Lorenz96 {
    pub fn new(dimension: usize, dt: f64) -> Result<Self, DynamicsError> {
        if dimension < 4 {
            return Err(DynamicsError::DimensionTooSmall(dimension));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(DynamicsError::InvalidTimeStep(dt));
        }
        Ok(Self { dimension, dt })
    }
}

impl Model for Lorenz96 {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn parameter_count(&self) -> usize {
        1
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    #[inline]
    fn step_into(&self, x: &[f64], params: &[f64], out: &mut [f64]) -> Result<(), DynamicsError> {
        let nu = params[0];
        rk4_step(|s, k| lorenz96_tendency(s, nu, k), x, self.dt, out)
    }
}

/// The linear map `x(n+1) = coefficient * x(n)`, with no parameters.
///
/// Its standard-model posterior is Gaussian, which makes it the reference problem
/// for checking the sampler against an exact answer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearMap {
    pub dimension: usize,
    pub coefficient: f64,
}

impl Model for LinearMap {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn parameter_count(&self) -> usize {
        0
    }

    fn dt(&self) -> f64 {
        1.0
    }

    fn step_into(&self, x: &[f64], _params: &[f64], out: &mut [f64]) -> Result<(), DynamicsError> {
        for (o, v) in out.iter_mut().zip(x) {
            *o = self.coefficient * v;
        }
        if out.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(DynamicsError::Overflow)
        }
    }
}

/// A sequence of `len()` states of equal dimension, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    dimension: usize,
    data: Vec<f64>,
}

impl Trajectory {
    /// `rows` states of `dimension` zeros.
    pub fn zeros(rows: usize, dimension: usize) -> Self {
        Self {
            dimension,
            data: vec![0.0; rows * dimension],
        }
    }

    pub fn from_flat(dimension: usize, data: Vec<f64>) -> Result<Self, DynamicsError> {
        if dimension == 0 || !data.len().is_multiple_of(dimension) {
            return Err(DynamicsError::DimensionMismatch {
                expected: dimension,
                found: data.len(),
            });
        }
        Ok(Self { dimension, data })
    }

    pub fn from_rows(rows: &[StateVector]) -> Result<Self, DynamicsError> {
        let dimension = rows.first().map_or(0, StateVector::dimension);
        let mut data = Vec::with_capacity(rows.len() * dimension);
        for r in rows {
            if r.dimension() != dimension {
                return Err(DynamicsError::DimensionMismatch {
                    expected: dimension,
                    found: r.dimension(),
                });
            }
            data.extend_from_slice(r.as_slice());
        }
        Ok(Self { dimension, data })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.dimension).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.data[n * self.dimension..(n + 1) * self.dimension]
    }

    pub fn row_mut(&mut self, n: usize) -> &mut [f64] {
        &mut self.data[n * self.dimension..(n + 1) * self.dimension]
    }

    pub fn state(&self, n: usize) -> StateVector {
        StateVector(self.row(n).to_vec())
    }

    pub fn get(&self, n: usize, a: usize) -> f64 {
        self.data[n * self.dimension + a]
    }

    pub fn set(&mut self, n: usize, a: usize, value: f64) {
        self.data[n * self.dimension + a] = value;
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dimension.max(1))
    }

    /// Rows `start..end` as a new trajectory.
    pub fn slice(&self, start: usize, end: usize) -> Trajectory {
        Trajectory {
            dimension: self.dimension,
            data: self.data[start * self.dimension..end * self.dimension].to_vec(),
        }
    }
}

/// Iterates the one-step map: `out[0] = x0`, `out[k+1] = f(out[k])`, giving `n_steps + 1` states.
pub fn integrate(
    model: &dyn Model,
    x0: &StateVector,
    params: &[f64],
    n_steps: usize,
) -> Result<Trajectory, DynamicsError> {
    model.check_inputs(x0.as_slice(), params)?;
    let d = model.dimension();
    let mut traj = Trajectory::zeros(n_steps + 1, d);
    traj.row_mut(0).copy_from_slice(x0.as_slice());
    for k in 0..n_steps {
        let (done, rest) = traj.data.split_at_mut((k + 1) * d);
        model
            .step_into(&done[k * d..], params, &mut rest[..d])
            .map_err(|_| DynamicsError::OverflowAtStep { step: k + 1 })?;
    }
    Ok(traj)
}

/// Least-squares slope of `ln |y(t) - x(t)|` against `t` for two trajectories started at
/// `x0` and `x0 + perturbation`, over `n_steps` steps of the model.
pub fn log_separation_slope(
    model: &dyn Model,
    x0: &StateVector,
    perturbation: &[f64],
    params: &[f64],
    n_steps: usize,
) -> Result<f64, DynamicsError> {
    let shifted: Vec<f64> = x0.as_slice().iter().zip(perturbation).map(|(a, b)| a + b).collect();
    let a = integrate(model, x0, params, n_steps)?;
    let b = integrate(model, &StateVector::new(shifted)?, params, n_steps)?;
    let dt = model.dt();
    let points: Vec<(f64, f64)> = a
        .rows()
        .zip(b.rows())
        .enumerate()
        .map(|(k, (ra, rb))| {
            let sep = ra.iter().zip(rb).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
            (k as f64 * dt, sep.ln())
        })
        .collect();
    let n = points.len() as f64;
    let mean_t = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_l = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (t, l) in &points {
        sxy += (t - mean_t) * (l - mean_l);
        sxx += (t - mean_t) * (t - mean_t);
    }
    Ok(sxy / sxx)
}
