use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{debug, info, warn};
use pamc::annealer::{pamc_run_observed, AnnealError, AnnealObserver, RunRow};
use pamc::twin::divergence_step;
use pamc::{generate_twin, predict, rmse, InitRanges, Model, PamcSettings, Problem, RunRecord, Trajectory, TwinData};
use serde_json::json;

use crate::config::RunConfig;
use crate::csvio;
use crate::error::CliError;

pub const PARAM_NAMES: [&str; 1] = ["nu"];

/// Rungs and relative spread used for the plateau diagnostic stored in `meta.json`.
pub const PLATEAU_WINDOW: usize = 10;
pub const PLATEAU_THRESHOLD: f64 = 0.01;

/// A forecast has diverged once its error in the scored component exceeds this many noise
/// standard deviations.
pub const DIVERGENCE_SIGMAS: f64 = 5.0;

pub fn out_file(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.output_dir.join(name)
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_meta(cfg: &RunConfig, command: &str, results: serde_json::Value) -> Result<(), CliError> {
    let path = out_file(cfg, "meta.json");
    let meta = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": cfg,
        "seeds": {
            "master": cfg.master_seed,
            "twin_initial_condition": "stream(master, 1, attempt, 0)",
            "twin_noise": "stream(master, 2, 0, 0)",
            "initial_path": "stream(master, 3, q, attempt)",
            "chain": "stream(master, 4, q, beta)",
        },
        "results": results,
    });
    let text = serde_json::to_string_pretty(&meta).map_err(|e| CliError::format(&path, e))?;
    std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))
}

/// Generates the twin data set and writes `data.csv` and `truth.csv`.
pub fn cmd_generate(cfg: &RunConfig) -> Result<TwinData, CliError> {
    ensure_dir(&cfg.output_dir)?;
    let twin = generate_twin(&cfg.twin_config(), cfg.master_seed).map_err(|e| match e {
        pamc::twin::TwinError::Config(m) => CliError::Config(m),
        other => CliError::Numerical(other.to_string()),
    })?;
    csvio::write_data(&out_file(cfg, "data.csv"), &twin.observations, cfg.model.dt)?;
    csvio::write_truth(&out_file(cfg, "truth.csv"), &twin, cfg.model.dt)?;
    write_meta(
        cfg,
        "generate",
        json!({ "observations": twin.observations.len() * twin.observations.components().len() }),
    )?;
    info!(
        "generated {} observations over {} steps",
        twin.noise.len(),
        cfg.twin.window_steps
    );
    Ok(twin)
}

struct Progress {
    start: Instant,
}

impl AnnealObserver for Progress {
    fn chain_started(&self, q: usize, beta: usize, _init: &pamc::Path) {
        debug!("beta={beta} q={q} started");
    }

    fn rung_finished(&self, beta: usize, rows: &[RunRow]) {
        let best = rows.iter().map(|r| r.action.total).fold(f64::INFINITY, f64::min);
        let accept = rows.iter().map(|r| r.acceptance_rate).sum::<f64>() / rows.len().max(1) as f64;
        let nu = rows.iter().filter_map(|r| r.params.first()).sum::<f64>() / rows.len().max(1) as f64;
        info!(
            "beta={beta:>3} R_f={:.3e} min action={best:.4e} mean accept={accept:.3} mean nu={nu:.4} ({:.1}s)",
            rows.first().map_or(0.0, |r| r.r_f),
            self.start.elapsed().as_secs_f64()
        );
    }
}

fn write_record(cfg: &RunConfig, record: &RunRecord) -> Result<(), CliError> {
    csvio::write_actions(&out_file(cfg, "actions.csv"), &record.rows)?;
    csvio::write_params(&out_file(cfg, "params.csv"), &record.rows, &PARAM_NAMES)?;
    let mean = record.mean_path();
    csvio::write_est_paths(
        &out_file(cfg, "est_path.csv"),
        &record.final_paths,
        mean.as_ref(),
        cfg.model.dt,
    )
}

/// Runs the annealing on `data` and writes `actions.csv`, `params.csv` and `est_path.csv`.
/// A chain failure still writes every completed rung before returning the error.
pub fn cmd_assimilate(cfg: &RunConfig, data: &Path) -> Result<RunRecord, CliError> {
    ensure_dir(&cfg.output_dir)?;
    let model = cfg.lorenz96()?;
    let obs = csvio::read_data(data, cfg.schedule.r_m)?;
    if let Some(&c) = obs.components().iter().find(|&&c| c >= model.dimension()) {
        return Err(CliError::format(
            data,
            format!("component {} exceeds dimension {}", c + 1, model.dimension()),
        ));
    }
    if let Some(&n) = obs.steps().last().filter(|&&n| n > cfg.twin.window_steps) {
        return Err(CliError::format(
            data,
            format!("step {n} lies past the window of {} steps", cfg.twin.window_steps),
        ));
    }
    let settings = PamcSettings {
        schedule: cfg.schedule(),
        chains: cfg.chain_plan(),
        ranges: InitRanges::from_observations(&obs, model.dimension(), cfg.param_ranges()),
        master_seed: cfg.master_seed,
        threads: cfg.threads(),
    };
    let problem = Problem {
        obs: &obs,
        model: &model,
        window_steps: cfg.twin.window_steps,
    };
    info!(
        "assimilating {} paths over beta=0..={} on {} threads",
        settings.schedule.n_paths, settings.schedule.beta_max, settings.threads
    );
    let progress = Progress { start: Instant::now() };
    match pamc_run_observed(problem, &settings, &progress) {
        Ok(record) => {
            write_record(cfg, &record)?;
            write_meta(cfg, "assimilate", summarize(&record))?;
            Ok(record)
        }
        Err(AnnealError::Chain {
            q,
            beta,
            source,
            partial,
        }) => {
            warn!(
                "chain q={q} failed at beta={beta}; writing {} completed rows",
                partial.rows.len()
            );
            write_record(cfg, &partial)?;
            let message = format!("chain q={q} at beta={beta}: {source}");
            write_meta(cfg, "assimilate", json!({ "error": message }))?;
            Err(CliError::Numerical(message))
        }
        Err(AnnealError::Config(m)) => Err(CliError::Config(m)),
        Err(e) => Err(CliError::Numerical(e.to_string())),
    }
}

fn summarize(record: &RunRecord) -> serde_json::Value {
    let last = record.last_beta();
    let best = last.and_then(|b| record.min_action_row(b));
    let plateau = record.plateau(PLATEAU_WINDOW, PLATEAU_THRESHOLD);
    let mean_nu = pamc::expected_value(record, |p| p.params[0]);
    json!({
        "last_beta": last,
        "min_action": best.map(|r| json!({
            "q": r.q,
            "action": r.action.total,
            "meas_err": r.action.measurement_error,
            "model_err": r.action.model_error,
            "nu": r.params.first(),
        })),
        "expected_nu": mean_nu,
        "plateau": plateau,
    })
}

/// Predicts forward from the final state of the lowest-action path in `est_path`, using
/// that path's own parameter estimate. `actions.csv` and `params.csv` are read from the
/// same directory. Writes `prediction.csv` starting at the window's last step.
pub fn cmd_predict(cfg: &RunConfig, est_path: &Path) -> Result<Trajectory, CliError> {
    ensure_dir(&cfg.output_dir)?;
    let dir = est_path.parent().unwrap_or(Path::new("."));
    let (beta, q) = csvio::read_min_action(&dir.join("actions.csv"))?;
    let params_file = dir.join("params.csv");
    let params = csvio::read_params(&params_file)?
        .remove(&(beta, q))
        .ok_or_else(|| CliError::format(&params_file, format!("no estimate for beta={beta} q={q}")))?;
    let (step, x_final) = csvio::read_final_state(est_path, q)?;
    let model = cfg.lorenz96()?;
    if x_final.as_slice().len() != model.dimension() || params.len() != model.parameter_count() {
        return Err(CliError::format(
            est_path,
            "state or parameter count does not match the model",
        ));
    }
    let traj = predict(&model, &x_final, &params, cfg.twin.prediction_steps)
        .map_err(|e| CliError::Numerical(format!("prediction: {e}")))?;
    csvio::write_trajectory(&out_file(cfg, "prediction.csv"), &traj, step, cfg.model.dt)?;
    info!(
        "predicted {} steps from q={q} (beta={beta}, nu={:.4})",
        cfg.twin.prediction_steps, params[0]
    );
    Ok(traj)
}

#[derive(Debug, Clone)]
pub struct TwinOutcome {
    pub twin: TwinData,
    pub record: RunRecord,
    pub prediction: Trajectory,
    pub window_rmse: f64,
    pub prediction_rmse: f64,
    /// Steps after the window end at which the scored component first diverges.
    pub divergence_step: Option<usize>,
    /// Model time of that step; `None` if the forecast never diverges.
    pub divergence_time: Option<f64>,
}

/// RMS difference over the listed components; `None` when there are none.
fn columns_rmse(a: &Trajectory, b: &Trajectory, components: &[usize]) -> Option<f64> {
    if components.is_empty() || a.len() != b.len() {
        return None;
    }
    let ss: f64 = (0..a.len())
        .flat_map(|n| components.iter().map(move |&c| (n, c)))
        .map(|(n, c)| (a.get(n, c) - b.get(n, c)).powi(2))
        .sum();
    Some((ss / (a.len() * components.len()) as f64).sqrt())
}

/// generate, assimilate and predict in one output directory, then score against truth.
pub fn cmd_twin(cfg: &RunConfig) -> Result<TwinOutcome, CliError> {
    let twin = cmd_generate(cfg)?;
    let record = cmd_assimilate(cfg, &out_file(cfg, "data.csv"))?;
    let prediction = cmd_predict(cfg, &out_file(cfg, "est_path.csv"))?;

    let (_, best) = record
        .min_action_path()
        .ok_or_else(|| CliError::Numerical("no paths".into()))?;
    let window_rmse = rmse(&best.states, &twin.window_truth()).map_err(|e| CliError::Numerical(e.to_string()))?;
    let truth = twin.prediction_truth();
    let prediction_rmse = rmse(&prediction, &truth).map_err(|e| CliError::Numerical(e.to_string()))?;
    let component = cfg.twin.score_component - 1;
    let divergence = divergence_step(&prediction, &truth, component, DIVERGENCE_SIGMAS * cfg.twin.sigma);
    let divergence_time = divergence.map(|s| (s + cfg.twin.window_steps) as f64 * cfg.model.dt);

    let observed = twin.observations.components();
    let hidden: Vec<usize> = (0..cfg.model.dimension).filter(|a| !observed.contains(a)).collect();

    let mut results = summarize(&record);
    results["score"] = json!({
        "window_rmse": window_rmse,
        "prediction_rmse": prediction_rmse,
        // only available in twin mode, where the unobserved truth is known
        "unobserved_window_rmse": columns_rmse(&best.states, &twin.window_truth(), &hidden),
        "unobserved_prediction_rmse": columns_rmse(&prediction, &truth, &hidden),
        "divergence_step": divergence,
        "divergence_time": divergence_time,
    });
    write_meta(cfg, "twin", results)?;
    info!("window rmse {window_rmse:.4}, prediction rmse {prediction_rmse:.4}, divergence {divergence:?}");
    Ok(TwinOutcome {
        twin,
        record,
        prediction,
        window_rmse,
        prediction_rmse,
        divergence_step: divergence,
        divergence_time,
    })
}
