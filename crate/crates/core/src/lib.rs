//! Precision annealing Monte Carlo (PAMC) for statistical data assimilation.
//!
//! The pipeline estimates the full path of a discrete-time model, including unobserved
//! components and static parameters, from sparse noisy observations:
//!
//! 1. [`annealer::init_paths`] builds `N_I` paths that match the data exactly.
//! 2. [`annealer::pamc_run`] raises the model precision `R_f` geometrically and runs one
//!    Metropolis-Hastings chain ([`sampler::run_chain_from`]) per path and rung, each
//!    seeded by the previous rung's expected path.
//! 3. [`twin`] generates synthetic data with known truth and scores predictions.

pub mod action;
pub mod annealer;
pub mod dynamics;
pub mod sampler;
pub mod seeding;
pub mod twin;

pub use action::{action, delta_action, measurement_error, model_error, ActionBreakdown, ObservationSet, Path, Site};
pub use annealer::{
    expected_value, init_paths, pamc_run, AnnealSchedule, ChainPlan, InitRanges, Interval, PamcSettings, Problem,
    RunRecord,
};
pub use dynamics::{integrate, Lorenz96, Model, StateVector, Trajectory};
pub use sampler::{run_chain, AverageMode, ChainConfig, ChainResult};
pub use twin::{generate_twin, predict, rmse, TwinConfig, TwinData};
