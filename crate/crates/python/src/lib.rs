//! Python access to the experiment pipelines and history-value solver.

use std::path::Path;

use histagg::cli::{execute, ExperimentConfig};
use histagg::process::{load_process, ProcessSource, TruncationBudget};
use histagg::values::solve_history_optimal;
use histagg::LabError;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(err: LabError) -> PyErr {
    match err {
        LabError::Config(_) | LabError::Json(_) | LabError::Lookup(_) => PyValueError::new_err(err.to_string()),
        LabError::Io(_) => PyOSError::new_err(err.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Runs one pipeline from a JSON configuration and returns the JSON report.
/// Nothing is written to disk; the `out` field is ignored.
#[pyfunction]
fn run_pipeline(config_json: &str) -> PyResult<String> {
    let mut cfg: ExperimentConfig =
        serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    cfg.out.get_or_insert_with(|| ".".into());
    let resolved = cfg.resolve(Path::new(".")).map_err(to_py)?;
    let outcome = execute(&resolved).map_err(to_py)?;
    serde_json::to_string(&outcome.report).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// `(context key, Q* row, V*)` per context of a builtin or file process.
#[pyfunction]
#[pyo3(signature = (process, gamma, depth = None))]
fn solve(process: &str, gamma: f64, depth: Option<usize>) -> PyResult<Vec<(String, Vec<f64>, f64)>> {
    let source = ProcessSource::Named(process.to_string());
    let (kernel, _) = load_process(&source, Some(gamma), Path::new(".")).map_err(to_py)?;
    let budget = match depth {
        Some(d) => TruncationBudget::new(d, gamma),
        None => TruncationBudget::for_slack(gamma, histagg::cli::DEFAULT_SLACK),
    }
    .map_err(to_py)?;
    let (star, _) = solve_history_optimal(&kernel, &budget).map_err(to_py)?;
    Ok((0..kernel.num_contexts())
        .map(|c| (kernel.context_key(c), star.q[c].clone(), star.v[c]))
        .collect())
}

#[pymodule]
fn pyhistagg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add("SCHEMA_VERSION", histagg::cli::SCHEMA_VERSION)?;
    Ok(())
}
