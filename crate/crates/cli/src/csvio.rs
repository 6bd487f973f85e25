//! CSV layouts. Floats are written with 17 significant digits so every value round-trips.
//! Components and state columns are 1-based (`x1..xD`); chain indices `q` are 0-based.

use std::collections::BTreeMap;
use std::path::Path;

use pamc::annealer::RunRow;
use pamc::{ObservationSet, Path as ModelPath, StateVector, Trajectory, TwinData};

use crate::error::CliError;

pub const DATA_HEADER: [&str; 4] = ["step", "time", "component", "value"];
pub const ACTIONS_HEADER: [&str; 8] = [
    "beta",
    "q",
    "R_f",
    "action",
    "meas_err",
    "model_err",
    "accept_rate",
    "n_accepted",
];

pub fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::format(path, e))
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>, CliError> {
    csv::Reader::from_path(path).map_err(|e| CliError::format(path, e))
}

fn state_header(lead: &[&str], dimension: usize) -> Vec<String> {
    lead.iter()
        .map(|s| s.to_string())
        .chain((1..=dimension).map(|a| format!("x{a}")))
        .collect()
}

fn push_state(record: &mut Vec<String>, state: &[f64]) {
    record.extend(state.iter().map(|&v| fmt(v)));
}

fn finish(mut w: csv::Writer<std::fs::File>, path: &Path) -> Result<(), CliError> {
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_data(path: &Path, obs: &ObservationSet, dt: f64) -> Result<(), CliError> {
    let mut w = writer(path)?;
    let map = |e: csv::Error| CliError::format(path, e);
    w.write_record(DATA_HEADER).map_err(map)?;
    for (n, a, y) in obs.entries() {
        w.write_record([n.to_string(), fmt(n as f64 * dt), (a + 1).to_string(), fmt(y)])
            .map_err(map)?;
    }
    finish(w, path)
}

/// Reads `step,time,component,value` rows into an observation set; components become 0-based.
pub fn read_data(path: &Path, r_m: f64) -> Result<ObservationSet, CliError> {
    let mut r = reader(path)?;
    check_header(path, &mut r, &DATA_HEADER)?;
    let mut entries = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CliError::format(path, e))?;
        let line = i + 2;
        let step: usize = parse_field(path, &rec, 0, line)?;
        let component: usize = parse_field(path, &rec, 2, line)?;
        let value: f64 = parse_field(path, &rec, 3, line)?;
        if component == 0 {
            return Err(CliError::format(path, format!("line {line}: components are 1-based")));
        }
        entries.push((step, component - 1, value));
    }
    ObservationSet::from_entries(entries, r_m).map_err(|e| CliError::format(path, e))
}

pub fn write_trajectory(path: &Path, traj: &Trajectory, first_step: usize, dt: f64) -> Result<(), CliError> {
    let mut w = writer(path)?;
    let map = |e: csv::Error| CliError::format(path, e);
    w.write_record(state_header(&["step", "time"], traj.dimension()))
        .map_err(map)?;
    for (i, row) in traj.rows().enumerate() {
        let n = first_step + i;
        let mut rec = vec![n.to_string(), fmt(n as f64 * dt)];
        push_state(&mut rec, row);
        w.write_record(&rec).map_err(map)?;
    }
    finish(w, path)
}

pub fn write_truth(path: &Path, twin: &TwinData, dt: f64) -> Result<(), CliError> {
    write_trajectory(path, &twin.truth, 0, dt)
}

pub fn write_actions(path: &Path, rows: &[RunRow]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    let map = |e: csv::Error| CliError::format(path, e);
    w.write_record(ACTIONS_HEADER).map_err(map)?;
    for r in rows {
        w.write_record([
            r.beta.to_string(),
            r.q.to_string(),
            fmt(r.r_f),
            fmt(r.action.total),
            fmt(r.action.measurement_error),
            fmt(r.action.model_error),
            fmt(r.acceptance_rate),
            r.n_accepted.to_string(),
        ])
        .map_err(map)?;
    }
    finish(w, path)
}

pub fn write_params(path: &Path, rows: &[RunRow], names: &[&str]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    let map = |e: csv::Error| CliError::format(path, e);
    let mut header = vec!["beta".to_string(), "q".to_string()];
    header.extend(names.iter().map(|n| format!("{n}_est")));
    w.write_record(&header).map_err(map)?;
    for r in rows {
        let mut rec = vec![r.beta.to_string(), r.q.to_string()];
        rec.extend(r.params.iter().map(|&p| fmt(p)));
        w.write_record(&rec).map_err(map)?;
    }
    finish(w, path)
}

/// One row-set per chain, then the across-chain mean labelled `mean`.
pub fn write_est_paths(path: &Path, paths: &[ModelPath], mean: Option<&ModelPath>, dt: f64) -> Result<(), CliError> {
    let mut w = writer(path)?;
    let map = |e: csv::Error| CliError::format(path, e);
    let dimension = paths.first().map_or(0, |p| p.dimension());
    w.write_record(state_header(&["q", "step", "time"], dimension))
        .map_err(map)?;
    let labelled = paths
        .iter()
        .enumerate()
        .map(|(q, p)| (q.to_string(), p))
        .chain(mean.map(|m| ("mean".to_string(), m)));
    for (label, p) in labelled {
        for (n, row) in p.states.rows().enumerate() {
            let mut rec = vec![label.clone(), n.to_string(), fmt(n as f64 * dt)];
            push_state(&mut rec, row);
            w.write_record(&rec).map_err(map)?;
        }
    }
    finish(w, path)
}

/// Final-step state of chain `q` from an estimated-path file.
pub fn read_final_state(path: &Path, q: usize) -> Result<(usize, StateVector), CliError> {
    let mut r = reader(path)?;
    let label = q.to_string();
    let mut best: Option<(usize, Vec<f64>)> = None;
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CliError::format(path, e))?;
        if rec.get(0) != Some(label.as_str()) {
            continue;
        }
        let line = i + 2;
        let step: usize = parse_field(path, &rec, 1, line)?;
        if best.as_ref().is_none_or(|(s, _)| step > *s) {
            let state = (3..rec.len())
                .map(|c| parse_field(path, &rec, c, line))
                .collect::<Result<Vec<f64>, _>>()?;
            best = Some((step, state));
        }
    }
    let (step, state) = best.ok_or_else(|| CliError::format(path, format!("no rows for q={q}")))?;
    let state = StateVector::new(state).map_err(|e| CliError::format(path, e))?;
    Ok((step, state))
}

/// `(beta, q)` of the lowest total action at the highest rung in `actions.csv`.
pub fn read_min_action(path: &Path) -> Result<(usize, usize), CliError> {
    let mut r = reader(path)?;
    check_header(path, &mut r, &ACTIONS_HEADER)?;
    let mut best: Option<(usize, f64, usize)> = None;
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CliError::format(path, e))?;
        let line = i + 2;
        let beta: usize = parse_field(path, &rec, 0, line)?;
        let q: usize = parse_field(path, &rec, 1, line)?;
        let action: f64 = parse_field(path, &rec, 3, line)?;
        let better = match best {
            None => true,
            Some((b, a, _)) => beta > b || (beta == b && action < a),
        };
        if better {
            best = Some((beta, action, q));
        }
    }
    best.map(|(b, _, q)| (b, q))
        .ok_or_else(|| CliError::format(path, "no action rows"))
}

/// Parameter estimates keyed by `(beta, q)`.
pub fn read_params(path: &Path) -> Result<BTreeMap<(usize, usize), Vec<f64>>, CliError> {
    let mut r = reader(path)?;
    let mut out = BTreeMap::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CliError::format(path, e))?;
        let line = i + 2;
        let beta: usize = parse_field(path, &rec, 0, line)?;
        let q: usize = parse_field(path, &rec, 1, line)?;
        let params = (2..rec.len())
            .map(|c| parse_field(path, &rec, c, line))
            .collect::<Result<Vec<f64>, _>>()?;
        out.insert((beta, q), params);
    }
    Ok(out)
}

fn check_header(path: &Path, r: &mut csv::Reader<std::fs::File>, expected: &[&str]) -> Result<(), CliError> {
    let header = r.headers().map_err(|e| CliError::format(path, e))?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(CliError::format(
            path,
            format!("expected header {}", expected.join(",")),
        ));
    }
    Ok(())
}

fn parse_field<T: std::str::FromStr>(
    path: &Path,
    rec: &csv::StringRecord,
    col: usize,
    line: usize,
) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    let raw = rec
        .get(col)
        .ok_or_else(|| CliError::format(path, format!("line {line}: missing column {}", col + 1)))?;
    raw.trim()
        .parse()
        .map_err(|e| CliError::format(path, format!("line {line}, column {}: {e}", col + 1)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for v in [0.1, 1.0 / 3.0, -8.17, 1e-300, 12345.678901234567, f64::MIN_POSITIVE] {
            let s = fmt(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
        }
        assert_eq!(fmt(1.4), "1.3999999999999999e0");
    }

    #[test]
    fn data_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let obs = ObservationSet::new(vec![0, 2], vec![1, 3], vec![0.1, -2.5, 3.0, 1.0 / 7.0], 1.0).unwrap();
        write_data(&path, &obs, 0.025).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("step,time,component,value\n0,0.0000000000000000e0,2,"));
        let back = read_data(&path, 1.0).unwrap();
        assert_eq!(back.entries().collect::<Vec<_>>(), obs.entries().collect::<Vec<_>>());
    }

    #[test]
    fn data_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "step,time,component,value\n0,0,0,1.0\n").unwrap();
        assert!(read_data(&path, 1.0).unwrap_err().to_string().contains("1-based"));
        std::fs::write(&path, "n,t,c,v\n0,0,1,1.0\n").unwrap();
        assert!(read_data(&path, 1.0).is_err());
        std::fs::write(&path, "step,time,component,value\n0,0,1,abc\n").unwrap();
        assert!(read_data(&path, 1.0).unwrap_err().to_string().contains("line 2"));
    }

    #[test]
    fn min_action_prefers_last_rung() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("actions.csv");
        std::fs::write(
            &path,
            "beta,q,R_f,action,meas_err,model_err,accept_rate,n_accepted\n\
             0,0,1,1.0,0,0,0,0\n0,1,1,0.5,0,0,0,0\n1,0,1.4,9.0,0,0,0,0\n1,1,1.4,3.0,0,0,0,0\n1,2,1.4,4.0,0,0,0,0\n",
        )
        .unwrap();
        assert_eq!(read_min_action(&path).unwrap(), (1, 1));
    }
}
